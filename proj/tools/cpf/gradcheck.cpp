#include <functional>

#include "cpf/commands.hpp"
#include "cpf/composition_space.hpp"
#include "cpf/grad_check.hpp"
#include "cpf/model.hpp"
#include "cpf/rng.hpp"

namespace cpf::cli {

namespace {

constexpr std::size_t kText = 4;
constexpr std::size_t kVisual = 6;
constexpr std::size_t kTokens = 3;
constexpr std::size_t kBlocks = 3;
constexpr std::size_t kAttributes = 3;
constexpr std::size_t kObjects = 2;

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

FeatureBundle random_sample(Rng& rng, std::size_t attr, std::size_t obj) {
  FeatureBundle s;
  s.id = "g" + std::to_string(attr) + "_" + std::to_string(obj);
  s.deep_class = random_tensor(rng, {1, kVisual});
  s.deep_patches = random_tensor(rng, {kTokens, kVisual});
  for (std::size_t b = 0; b < kBlocks; ++b) {
    s.shallow_class.push_back(random_tensor(rng, {1, kVisual}));
    s.shallow_patches.push_back(random_tensor(rng, {kTokens, kVisual}));
  }
  s.attr = attr;
  s.obj = obj;
  return s;
}

struct Instance {
  CpfParams params;
  TextEmbeddings text;
  std::vector<FeatureBundle> batch;
  CandidateList candidates;
};

Instance make_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 7));
  Instance in;
  in.params = init_params({kVisual, kText, kBlocks, kText}, derive_seed(seed, 1));
  // Nonzero biases so their gradients are exercised too.
  for (Linear* l : {&in.params.proj_obj, &in.params.proj_attr, &in.params.fusion,
                    &in.params.comp_visual, &in.params.comp_text}) {
    for (double& v : l->bias.data()) v = 0.1 * rng.normal();
  }
  for (std::size_t a = 0; a < kAttributes; ++a) in.text.attr_names.push_back("a" + std::to_string(a));
  for (std::size_t o = 0; o < kObjects; ++o) in.text.obj_names.push_back("o" + std::to_string(o));
  in.text.attr = random_tensor(rng, {kAttributes, kText});
  in.text.obj = random_tensor(rng, {kObjects, kText});
  in.text.frozen = true;
  in.batch.push_back(random_sample(rng, rng.below(kAttributes), rng.below(kObjects)));
  in.batch.push_back(random_sample(rng, rng.below(kAttributes), rng.below(kObjects)));
  std::vector<Pair> all;
  for (std::size_t a = 0; a < kAttributes; ++a) {
    for (std::size_t o = 0; o < kObjects; ++o) all.push_back({a, o});
  }
  in.candidates = CandidateList(all);
  return in;
}

enum class Head { kObject, kAttribute, kComposition, kTotal };

struct PathSpec {
  const char* name;
  Head head;
  Ablation ablation;
  bool train_text;
};

constexpr PathSpec kPaths[] = {
    {"object", Head::kObject, Ablation::kNone, false},
    {"attribute", Head::kAttribute, Ablation::kNone, false},
    {"composition", Head::kComposition, Ablation::kNone, false},
    {"total", Head::kTotal, Ablation::kNone, false},
    {"total/no-teo", Head::kTotal, Ablation::kNoTeo, false},
    {"total/no-teo-oga", Head::kTotal, Ablation::kNoTeoNoOga, false},
    {"total/trainable-text", Head::kTotal, Ablation::kNone, true},
};

Var path_loss(Tape& tape, Instance& in, const PathSpec& path) {
  in.params.ablation = path.ablation;
  const ParamVars pv = bind_params(tape, in.params);
  const TextVars tv = bind_text(tape, in.text);
  if (path.head == Head::kTotal) {
    return forward_losses(tape, in.batch, pv, tv, in.params, in.candidates).total;
  }
  const FeatureBundle& s = in.batch.front();
  const Var comp_text = composition_text(tape, tv, in.candidates.pairs(), pv.comp_text);
  const SampleVars sv = forward_sample(tape, s, pv, tv, comp_text, path.ablation);
  const double tau = in.params.temperature;
  switch (path.head) {
    case Head::kObject: return tape.cross_entropy(sv.obj_logits, s.obj, tau);
    case Head::kAttribute: return tape.cross_entropy(sv.attr_logits, s.attr, tau);
    default: return tape.cross_entropy(sv.comp_logits, *in.candidates.index_of({s.attr, s.obj}), tau);
  }
}

}  // namespace

std::vector<GradcheckPath> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckPath> results;
  for (const PathSpec& path : kPaths) results.push_back({path.name, 0.0, options.seed, ""});

  std::vector<std::string> names = CpfParams::tensor_names();
  names.emplace_back("text.attr");
  names.emplace_back("text.obj");
  TapeOptions tape_options;
  tape_options.inject_softmax_fault = options.inject_fault;

  for (std::size_t k = 0; k < options.seeds; ++k) {
    const std::uint64_t seed = options.seed + k;
    for (std::size_t p = 0; p < std::size(kPaths); ++p) {
      const PathSpec& path = kPaths[p];
      Instance in = make_instance(seed);
      in.text.frozen = !path.train_text;
      std::vector<Tensor*> tensors = in.params.tensors();
      if (path.train_text) {
        tensors.push_back(&in.text.attr);
        tensors.push_back(&in.text.obj);
      }
      const auto per_tensor = grad_check_params(
          [&](Tape& tape) { return path_loss(tape, in, path); }, tensors, options.eps,
          tape_options);
      for (std::size_t t = 0; t < per_tensor.size(); ++t) {
        if (per_tensor[t].max_rel_error > results[p].max_rel_error ||
            results[p].worst_tensor.empty()) {
          results[p].max_rel_error = per_tensor[t].max_rel_error;
          results[p].worst_seed = seed;
          results[p].worst_tensor = names[t];
        }
      }
    }
  }
  return results;
}

}  // namespace cpf::cli
