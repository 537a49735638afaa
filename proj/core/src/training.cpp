#include "cpf/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "cpf/errors.hpp"
#include "cpf/rng.hpp"

namespace cpf {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStreamBase = 1000;

template <typename Fn>
auto with_context(const std::string& context, Fn&& fn) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(context + ": " + e.what());
  }
}

std::string format_record(const TrainRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                static_cast<long long>(r.step), r.lr, r.losses.composition, r.losses.attribute,
                r.losses.object, r.losses.total);
  return buf;
}

LossValues read_losses(const Tape& tape, const LossVars& v) {
  return {tape.value(v.composition)[0], tape.value(v.attribute)[0], tape.value(v.object)[0],
          tape.value(v.total)[0]};
}

void accumulate(LossValues& acc, const LossValues& v, double weight) {
  acc.composition += weight * v.composition;
  acc.attribute += weight * v.attribute;
  acc.object += weight * v.object;
  acc.total += weight * v.total;
}

}  // namespace

AdamState AdamState::for_params(std::span<const Tensor* const> params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.first_moment.emplace_back(p->shape());
    s.second_moment.emplace_back(p->shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, AdamState& state, double lr,
               std::span<const std::string> names) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("Adam state tracks " + std::to_string(state.first_moment.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].shape() != params[i]->shape()) {
      throw DimensionError("Adam moment shape " + to_string(state.first_moment[i].shape()) +
                           " differs from parameter " + to_string(params[i]->shape()));
    }
    for (double g : params[i]->grad()) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw NumericError("non-finite gradient in parameter " + name);
      }
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    const auto grad = params[i]->grad();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
  if (!(decay_factor > 0.0)) throw ConfigError("decay factor must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(alpha_attr >= 0.0) || !(alpha_obj >= 0.0)) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  return epoch < config.decay_epoch ? config.base_lr : config.base_lr * config.decay_factor;
}

std::string TrainLog::serialize() const {
  std::string out;
  std::size_t next_step = 0;
  for (const TrainRecord& e : epochs) {
    while (next_step < steps.size() && steps[next_step].epoch <= e.epoch) {
      out += format_record(steps[next_step++]);
    }
    out += format_record(e);
  }
  while (next_step < steps.size()) out += format_record(steps[next_step++]);
  return out;
}

std::vector<FeatureBundle> select_shallow_blocks(std::span<const FeatureBundle> samples,
                                                 std::span<const std::size_t> blocks) {
  std::vector<FeatureBundle> out;
  out.reserve(samples.size());
  for (const FeatureBundle& s : samples) {
    FeatureBundle copy;
    copy.id = s.id;
    copy.deep_class = s.deep_class;
    copy.deep_patches = s.deep_patches;
    copy.attr = s.attr;
    copy.obj = s.obj;
    for (std::size_t b : blocks) {
      if (b >= s.shallow_patches.size()) {
        throw ConfigError("shallow block " + std::to_string(b) + " not present (image has " +
                          std::to_string(s.shallow_patches.size()) + ")");
      }
      copy.shallow_patches.push_back(s.shallow_patches[b]);
      if (b < s.shallow_class.size()) copy.shallow_class.push_back(s.shallow_class[b]);
    }
    out.push_back(std::move(copy));
  }
  return out;
}

CandidateList training_candidates(const CompositionSpace& space, bool full_softmax) {
  return CandidateList(full_softmax ? space.open_world_candidates() : space.train_seen);
}

CpfParams initial_params(const FeatureBundle& sample, const TextEmbeddings& text,
                         const TrainConfig& config) {
  ModelDims dims;
  dims.visual = sample.dim();
  dims.text = text.dim();
  dims.blocks = config.shallow_blocks.empty() ? sample.blocks() : config.shallow_blocks.size();
  dims.joint = config.joint_dim == 0 ? dims.text : config.joint_dim;
  CpfParams p = init_params(dims, derive_seed(config.seed, kInitStream));
  p.temperature = config.temperature;
  p.alpha_attr = config.alpha_attr;
  p.alpha_obj = config.alpha_obj;
  p.ablation = config.ablation;
  return p;
}

LossValues evaluate_losses(std::span<const FeatureBundle> samples, const CpfParams& params,
                           const TextEmbeddings& text, const CandidateList& candidates,
                           std::size_t batch_size) {
  if (samples.empty()) throw ContractError("evaluate_losses needs samples");
  if (batch_size == 0) batch_size = samples.size();
  LossValues acc;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - start);
    Tape tape;
    const ParamVars pv = bind_constant_params(tape, params);
    const TextVars tv = bind_constant_text(tape, text);
    const LossVars lv = forward_losses(tape, samples.subspan(start, n), pv, tv, params, candidates);
    accumulate(acc, read_losses(tape, lv), static_cast<double>(n));
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  return {acc.composition * inv, acc.attribute * inv, acc.object * inv, acc.total * inv};
}

TrainResult train(std::span<const FeatureBundle> train_set, const TextEmbeddings& text,
                  const CompositionSpace& space, const TrainConfig& config) {
  config.validate();
  text.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  std::vector<FeatureBundle> selected;
  std::span<const FeatureBundle> samples = train_set;
  if (!config.shallow_blocks.empty()) {
    selected = select_shallow_blocks(train_set, config.shallow_blocks);
    samples = selected;
  }
  for (const FeatureBundle& s : samples) {
    s.validate();
    if (!space.is_seen({s.attr, s.obj})) {
      throw DataError("training image '" + s.id + "' is labeled " +
                      space.pair_name({s.attr, s.obj}) + ", which is not a seen composition");
    }
  }

  TrainResult result;
  result.text = text;
  result.params = initial_params(samples.front(), text, config);
  result.params.validate();
  const CandidateList candidates = training_candidates(space, config.full_train_softmax);

  std::vector<Tensor*> trainable = result.params.tensors();
  std::vector<std::string> names = CpfParams::tensor_names();
  if (!result.text.frozen) {
    trainable.push_back(&result.text.attr);
    trainable.push_back(&result.text.obj);
    names.emplace_back("text.attr");
    names.emplace_back("text.obj");
  }
  result.adam = AdamState::for_params(std::vector<const Tensor*>(trainable.begin(), trainable.end()));

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<FeatureBundle> batch;
  std::int64_t global_step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    Rng shuffler(derive_seed(config.seed, kShuffleStreamBase + epoch));
    shuffler.shuffle(std::span<std::size_t>(order));

    LossValues epoch_sum;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch.clear();
      for (std::size_t k = 0; k < n; ++k) batch.push_back(samples[order[start + k]]);

      const std::string context =
          "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
      const LossValues values = with_context(context, [&] {
        Tape tape;
        const ParamVars pv = bind_params(tape, result.params);
        const TextVars tv = bind_text(tape, result.text);
        const LossVars lv = forward_losses(tape, batch, pv, tv, result.params, candidates);
        const LossValues v = read_losses(tape, lv);
        if (!std::isfinite(v.total)) throw NumericError("non-finite loss");
        for (Tensor* t : trainable) t->zero_grad();
        tape.backward(lv.total);
        adam_step(trainable, result.adam, lr, names);
        return v;
      });
      ++global_step;
      accumulate(epoch_sum, values, static_cast<double>(n));
      if (config.log_every != 0 && global_step % static_cast<std::int64_t>(config.log_every) == 0) {
        result.log.steps.push_back({epoch, global_step, lr, values});
      }
    }
    for (Tensor* t : trainable) t->drop_grad();

    const double inv = 1.0 / static_cast<double>(samples.size());
    result.log.epochs.push_back({epoch, -1, lr,
                                 {epoch_sum.composition * inv, epoch_sum.attribute * inv,
                                  epoch_sum.object * inv, epoch_sum.total * inv}});
  }
  return result;
}

}  // namespace cpf
