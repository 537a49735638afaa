#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpf/composition_space.hpp"
#include "cpf/features.hpp"
#include "cpf/model.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState for_params(std::span<const Tensor* const> params);
};

/// One bias-corrected Adam update using each parameter's grad buffer (a
/// missing buffer counts as a zero gradient). Throws NumericError naming the
/// parameter when a gradient is non-finite; nothing is updated in that case.
void adam_step(std::span<Tensor* const> params, AdamState& state, double lr,
               std::span<const std::string> names = {});

struct TrainConfig {
  std::size_t epochs = 10;
  double base_lr = 1e-4;
  double decay_factor = 0.1;
  std::size_t decay_epoch = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double temperature = 0.05;
  double alpha_attr = 0.6;
  double alpha_obj = 0.4;
  /// Subset of stored shallow blocks to fuse; empty means all of them.
  std::vector<std::size_t> shallow_blocks;
  /// Record every n-th optimizer step in the log (0 disables step records).
  std::size_t log_every = 0;
  /// Use all M x N compositions in the training composition softmax instead
  /// of only the seen training pairs.
  bool full_train_softmax = false;
  Ablation ablation = Ablation::kNone;
  /// Width of the composition embedding; 0 selects the text width d.
  std::size_t joint_dim = 0;

  void validate() const;
};

/// base_lr before decay_epoch, base_lr * decay_factor from then on.
double lr_at(std::size_t epoch, const TrainConfig& config);

struct LossValues {
  double composition = 0.0;
  double attribute = 0.0;
  double object = 0.0;
  double total = 0.0;
};

struct TrainRecord {
  std::size_t epoch = 0;
  std::int64_t step = 0;  // global 1-based step; -1 marks an epoch mean
  double lr = 0.0;
  LossValues losses;
};

struct TrainLog {
  std::vector<TrainRecord> steps;
  std::vector<TrainRecord> epochs;

  /// Line-delimited `epoch,step,lr,L_com,L_att,L_obj,L_total` records with
  /// round-trip precision. Step records come first in step order, each epoch
  /// mean follows the steps of its epoch.
  std::string serialize() const;
};

struct TrainResult {
  CpfParams params;
  AdamState adam;
  TrainLog log;
  TextEmbeddings text;  // identical to the input when frozen
};

/// Copies `samples` keeping only the listed shallow blocks (and their class tokens).
std::vector<FeatureBundle> select_shallow_blocks(std::span<const FeatureBundle> samples,
                                                 std::span<const std::size_t> blocks);

/// Training composition list: seen training pairs, or all pairs when
/// `full_softmax` is set.
CandidateList training_candidates(const CompositionSpace& space, bool full_softmax);

/// Parameters exactly as train() initializes them for this data and config.
CpfParams initial_params(const FeatureBundle& sample, const TextEmbeddings& text,
                         const TrainConfig& config);

/// Sample-weighted mean losses with no parameter updates.
LossValues evaluate_losses(std::span<const FeatureBundle> samples, const CpfParams& params,
                           const TextEmbeddings& text, const CandidateList& candidates,
                           std::size_t batch_size = 64);

/// Minimizes the joint loss with Adam. Deterministic for a fixed config.seed.
TrainResult train(std::span<const FeatureBundle> train_set, const TextEmbeddings& text,
                  const CompositionSpace& space, const TrainConfig& config);

}  // namespace cpf
