#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpf/composition_space.hpp"
#include "cpf/features.hpp"

namespace cpf {

/// Desk-scale stand-in for a compositional dataset.
///
/// Each image shows its composition on a random subset of patch positions
/// (the foreground) and one distractor composition on the rest. Deep patches
/// carry object prototypes; shallow patches carry
///   (1 - dependence) * attribute prototype + dependence * mix(attribute, object),
/// where mix() blends the attribute with the object prototype and a per-pair
/// hashed direction, so attribute appearance depends on the object.
struct SynthConfig {
  std::size_t num_attributes = 8;  // M
  std::size_t num_objects = 6;     // N
  std::size_t dim = 256;           // D
  std::size_t text_dim = 128;      // d
  std::size_t tokens = 8;          // T
  std::size_t blocks = 3;          // B
  double seen_fraction = 0.7;
  std::size_t samples_per_composition = 40;
  double noise = 0.1;       // sigma
  double dependence = 0.8;  // kappa
  std::uint64_t seed = 0;

  double foreground_fraction = 0.625;
  /// Amplitude of background patches in the shallow blocks relative to the
  /// foreground.
  double clutter_gain = 5.0 / 3.0;
  /// Share of the distractor object in deep background patches; 0 makes
  /// every deep patch show the image's own object.
  double deep_clutter = 0.0;
  double feature_scale = 8.0;
  /// Share of each seen composition's images used for training; the rest
  /// is split evenly between validation and test.
  double train_fraction = 0.7;
  /// Share of unseen compositions held out for validation instead of test.
  double val_unseen_fraction = 0.5;

  /// Throws ConfigError for out-of-range values or infeasible splits.
  void validate() const;
  std::size_t seen_count() const;
};

struct SynthData {
  std::vector<FeatureBundle> train;
  std::vector<FeatureBundle> val;
  std::vector<FeatureBundle> test;
  CompositionSpace space;
  TextEmbeddings text;
  /// Foreground patch positions per image id.
  std::map<std::string, std::vector<bool>> foreground;
};

/// Deterministic for a fixed config (including seed).
SynthData synth_generate(const SynthConfig& config);

}  // namespace cpf
