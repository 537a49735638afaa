#include "cpf/model.hpp"

#include <cmath>
#include <string>

#include "cpf/errors.hpp"
#include "cpf/kernels.hpp"
#include "cpf/rng.hpp"

namespace cpf {

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "full";
    case Ablation::kNoTeo: return "no-teo";
    case Ablation::kNoTeoNoOga: return "no-teo-oga";
  }
  return "unknown";
}

bool parse_ablation(const std::string& text, Ablation& out) {
  for (Ablation a : {Ablation::kNone, Ablation::kNoTeo, Ablation::kNoTeoNoOga}) {
    if (text == to_string(a)) {
      out = a;
      return true;
    }
  }
  return false;
}

ModelDims CpfParams::dims() const {
  ModelDims d;
  d.visual = proj_obj.in();
  d.text = proj_obj.out();
  d.blocks = d.visual == 0 ? 0 : fusion.in() / d.visual;
  d.joint = comp_visual.out();
  return d;
}

std::vector<Tensor*> CpfParams::tensors() {
  return {&proj_obj.weight,    &proj_obj.bias,    &proj_attr.weight, &proj_attr.bias,
          &fusion.weight,      &fusion.bias,      &comp_visual.weight, &comp_visual.bias,
          &comp_text.weight,   &comp_text.bias};
}

std::vector<const Tensor*> CpfParams::tensors() const {
  auto mut = const_cast<CpfParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> CpfParams::tensor_names() {
  return {"proj_obj.weight",    "proj_obj.bias",    "proj_attr.weight", "proj_attr.bias",
          "fusion.weight",      "fusion.bias",      "comp_visual.weight", "comp_visual.bias",
          "comp_text.weight",   "comp_text.bias"};
}

void CpfParams::validate() const {
  const ModelDims d = dims();
  const auto expect = [](const Linear& l, std::size_t in, std::size_t out, const char* name) {
    if (l.weight.rank() != 2 || l.weight.rows() != in || l.weight.cols() != out ||
        l.bias.size() != out) {
      throw DimensionError(std::string(name) + " expected " + std::to_string(in) + "->" +
                           std::to_string(out) + ", got weight " + to_string(l.weight.shape()) +
                           " bias " + to_string(l.bias.shape()));
    }
  };
  if (d.visual == 0 || d.text == 0 || d.blocks == 0 || d.joint == 0) {
    throw DimensionError("parameters are uninitialized");
  }
  expect(proj_obj, d.visual, d.text, "proj_obj");
  expect(proj_attr, d.visual, d.text, "proj_attr");
  expect(fusion, d.blocks * d.visual, d.visual, "fusion");
  expect(comp_visual, 2 * d.visual, d.joint, "comp_visual");
  expect(comp_text, 2 * d.text, d.joint, "comp_text");
  const auto names = tensor_names();
  const auto ts = tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!ts[i]->all_finite()) throw ConfigError(names[i] + " has non-finite values");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive and finite");
  }
  if (!(alpha_attr >= 0.0) || !(alpha_obj >= 0.0)) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

namespace {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  Linear l{Tensor({in, out}), Tensor({1, out})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight.data()) w = rng.uniform(-bound, bound);
  return l;
}

Var mean_rows(Tape& tape, Var x) {
  const std::size_t rows = tape.value(x).rows();
  Tensor avg({1, rows});
  for (double& v : avg.data()) v = 1.0 / static_cast<double>(rows);
  return tape.matmul(tape.constant(std::move(avg)), x);
}

LinearVars bind_linear(Tape& tape, Linear& l) {
  return {tape.parameter(l.weight), tape.parameter(l.bias)};
}

LinearVars bind_constant_linear(Tape& tape, const Linear& l) {
  return {tape.constant(l.weight), tape.constant(l.bias)};
}

}  // namespace

CpfParams init_params(const ModelDims& dims, std::uint64_t seed) {
  if (dims.visual == 0 || dims.text == 0 || dims.blocks == 0 || dims.joint == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  CpfParams p;
  std::uint64_t stream = 0;
  const auto next = [&](std::size_t in, std::size_t out) {
    Rng rng(derive_seed(seed, stream++));
    return make_linear(in, out, rng);
  };
  p.proj_obj = next(dims.visual, dims.text);
  p.proj_attr = next(dims.visual, dims.text);
  p.fusion = next(dims.blocks * dims.visual, dims.visual);
  p.comp_visual = next(2 * dims.visual, dims.joint);
  p.comp_text = next(2 * dims.text, dims.joint);
  return p;
}

ParamVars bind_params(Tape& tape, CpfParams& p) {
  return {bind_linear(tape, p.proj_obj), bind_linear(tape, p.proj_attr),
          bind_linear(tape, p.fusion), bind_linear(tape, p.comp_visual),
          bind_linear(tape, p.comp_text)};
}

ParamVars bind_constant_params(Tape& tape, const CpfParams& p) {
  return {bind_constant_linear(tape, p.proj_obj), bind_constant_linear(tape, p.proj_attr),
          bind_constant_linear(tape, p.fusion), bind_constant_linear(tape, p.comp_visual),
          bind_constant_linear(tape, p.comp_text)};
}

TextVars bind_text(Tape& tape, TextEmbeddings& text) {
  if (text.frozen) return bind_constant_text(tape, text);
  return {tape.parameter(text.attr), tape.parameter(text.obj)};
}

TextVars bind_constant_text(Tape& tape, const TextEmbeddings& text) {
  return {tape.constant(text.attr), tape.constant(text.obj)};
}

Var apply_linear(Tape& tape, const LinearVars& layer, Var x) {
  return tape.add(tape.matmul(x, layer.weight), layer.bias);
}

AttentionVars scaled_dot_attention(Tape& tape, Var q, Var keys, Var values, double scale) {
  if (!(scale > 0.0)) throw ContractError("attention scale must be positive");
  if (tape.value(keys).rows() != tape.value(values).rows()) {
    throw DimensionError("attention keys " + to_string(tape.value(keys).shape()) +
                         " and values " + to_string(tape.value(values).shape()) +
                         " differ in token count");
  }
  Var scores = tape.matmul(q, keys, kernels::Transpose::kYes);
  Var weights = tape.softmax_lastdim(tape.scale(scores, 1.0 / scale));
  return {tape.matmul(weights, values), weights};
}

Var fuse_shallow(Tape& tape, std::span<const Var> blocks, const LinearVars& fusion) {
  if (blocks.empty()) throw DimensionError("fuse_shallow needs at least one block");
  const Shape& first = tape.value(blocks.front()).shape();
  for (Var b : blocks) {
    if (tape.value(b).shape() != first) {
      throw DimensionError("shallow block shape " + to_string(tape.value(b).shape()) +
                           " disagrees with " + to_string(first));
    }
  }
  const std::size_t fused_in = tape.value(blocks.front()).cols() * blocks.size();
  if (tape.value(fusion.weight).rows() != fused_in) {
    throw DimensionError("fusion layer expects " + std::to_string(tape.value(fusion.weight).rows()) +
                         " inputs per token, blocks provide " + std::to_string(fused_in));
  }
  return apply_linear(tape, fusion, tape.concat_lastdim(blocks));
}

Var textual_descriptor(Tape& tape, Var deep_class, Var obj_text, const LinearVars& proj_obj) {
  const double d = static_cast<double>(tape.value(obj_text).cols());
  Var query = apply_linear(tape, proj_obj, deep_class);
  return scaled_dot_attention(tape, query, obj_text, obj_text, std::sqrt(d)).out;
}

Var text_enhanced_object(Tape& tape, Var deep_class, Var deep_patches, Var descriptor,
                         const LinearVars& proj_obj) {
  const double d = static_cast<double>(tape.value(descriptor).cols());
  Var keys = apply_linear(tape, proj_obj, deep_patches);
  Var pooled = scaled_dot_attention(tape, descriptor, keys, deep_patches, std::sqrt(d)).out;
  return tape.add(deep_class, pooled);
}

Var object_guided_attribute(Tape& tape, Var object_feature, Var shallow_tokens) {
  const double dim = static_cast<double>(tape.value(shallow_tokens).cols());
  return scaled_dot_attention(tape, object_feature, shallow_tokens, shallow_tokens,
                              std::sqrt(dim)).out;
}

Var object_logits(Tape& tape, Var object_feature, Var obj_text, const LinearVars& proj_obj) {
  return tape.matmul(apply_linear(tape, proj_obj, object_feature), obj_text,
                     kernels::Transpose::kYes);
}

Var attribute_logits(Tape& tape, Var attr_feature, Var attr_text, const LinearVars& proj_attr) {
  return tape.matmul(apply_linear(tape, proj_attr, attr_feature), attr_text,
                     kernels::Transpose::kYes);
}

Var composition_text(Tape& tape, const TextVars& text, std::span<const Pair> candidates,
                     const LinearVars& comp_text) {
  if (candidates.empty()) throw ContractError("composition candidates must not be empty");
  std::vector<std::size_t> attrs, objs;
  attrs.reserve(candidates.size());
  objs.reserve(candidates.size());
  for (Pair p : candidates) {
    attrs.push_back(p.attr);
    objs.push_back(p.obj);
  }
  const Var parts[] = {tape.select_rows(text.attr, std::move(attrs)),
                       tape.select_rows(text.obj, std::move(objs))};
  return apply_linear(tape, comp_text, tape.concat_lastdim(parts));
}

Var composition_logits(Tape& tape, Var attr_feature, Var object_feature, Var comp_text_features,
                       const LinearVars& comp_visual) {
  const Var parts[] = {attr_feature, object_feature};
  Var visual = apply_linear(tape, comp_visual, tape.concat_lastdim(parts));
  return tape.matmul(visual, comp_text_features, kernels::Transpose::kYes);
}

std::vector<double> tempered_probs(const Tensor& logits, double temperature) {
  std::vector<double> out = kernels::log_softmax(logits.data(), temperature);
  for (double& v : out) v = std::exp(v);
  return out;
}

SampleVars forward_sample(Tape& tape, const FeatureBundle& sample, const ParamVars& params,
                          const TextVars& text, Var comp_text_features, Ablation ablation) {
  Var deep_class = tape.constant(sample.deep_class);
  Var deep_patches = tape.constant(sample.deep_patches);
  std::vector<Var> blocks;
  blocks.reserve(sample.shallow_patches.size());
  for (const Tensor& b : sample.shallow_patches) blocks.push_back(tape.constant(b));
  Var shallow = fuse_shallow(tape, blocks, params.fusion);

  SampleVars out;
  if (ablation == Ablation::kNone) {
    Var descriptor = textual_descriptor(tape, deep_class, text.obj, params.proj_obj);
    out.object_feature =
        text_enhanced_object(tape, deep_class, deep_patches, descriptor, params.proj_obj);
  } else {
    out.object_feature = tape.add(deep_class, mean_rows(tape, deep_patches));
  }
  out.attr_feature = ablation == Ablation::kNoTeoNoOga
                         ? mean_rows(tape, shallow)
                         : object_guided_attribute(tape, out.object_feature, shallow);
  out.obj_logits = object_logits(tape, out.object_feature, text.obj, params.proj_obj);
  out.attr_logits = attribute_logits(tape, out.attr_feature, text.attr, params.proj_attr);
  out.comp_logits = composition_logits(tape, out.attr_feature, out.object_feature,
                                       comp_text_features, params.comp_visual);
  return out;
}

LossVars forward_losses(Tape& tape, std::span<const FeatureBundle> batch, const ParamVars& params,
                        const TextVars& text, const CpfParams& config,
                        const CandidateList& candidates) {
  if (batch.empty()) throw ContractError("forward_losses needs a nonempty batch");
  Var comp_text = composition_text(tape, text, candidates.pairs(), params.comp_text);
  const double tau = config.temperature;

  Var sum_com{}, sum_att{}, sum_obj{};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FeatureBundle& s = batch[i];
    const auto label = candidates.index_of({s.attr, s.obj});
    if (!label) {
      throw DataError("image '" + s.id + "' has composition (" + std::to_string(s.attr) + "," +
                      std::to_string(s.obj) + ") outside the training compositions");
    }
    const SampleVars v = forward_sample(tape, s, params, text, comp_text, config.ablation);
    Var l_com = tape.cross_entropy(v.comp_logits, *label, tau);
    Var l_att = tape.cross_entropy(v.attr_logits, s.attr, tau);
    Var l_obj = tape.cross_entropy(v.obj_logits, s.obj, tau);
    if (i == 0) {
      sum_com = l_com;
      sum_att = l_att;
      sum_obj = l_obj;
    } else {
      sum_com = tape.add(sum_com, l_com);
      sum_att = tape.add(sum_att, l_att);
      sum_obj = tape.add(sum_obj, l_obj);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossVars out;
  out.composition = tape.scale(sum_com, inv);
  out.attribute = tape.scale(sum_att, inv);
  out.object = tape.scale(sum_obj, inv);
  out.total = tape.add(tape.add(out.composition, tape.scale(out.attribute, config.alpha_attr)),
                       tape.scale(out.object, config.alpha_obj));
  return out;
}

Scorer::Scorer(const CpfParams& params, const TextEmbeddings& text, CandidateList candidates)
    : params_(params), text_(text), candidates_(std::move(candidates)) {
  Tape tape;
  ParamVars pv = bind_constant_params(tape, params_);
  TextVars tv = bind_constant_text(tape, text_);
  comp_text_ = tape.value(composition_text(tape, tv, candidates_.pairs(), pv.comp_text));
}

Probabilities Scorer::score(const FeatureBundle& sample) const {
  Tape tape;
  ParamVars pv = bind_constant_params(tape, params_);
  TextVars tv = bind_constant_text(tape, text_);
  Var comp_text = tape.constant(comp_text_);
  const SampleVars v = forward_sample(tape, sample, pv, tv, comp_text, params_.ablation);
  const double tau = params_.temperature;
  return {tempered_probs(tape.value(v.comp_logits), tau),
          tempered_probs(tape.value(v.attr_logits), tau),
          tempered_probs(tape.value(v.obj_logits), tau)};
}

}  // namespace cpf
