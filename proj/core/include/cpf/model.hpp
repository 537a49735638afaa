#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpf/composition_space.hpp"
#include "cpf/features.hpp"
#include "cpf/tape.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

/// Affine map y = x W + b with W: in x out and b: 1 x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in() const noexcept { return weight.rows(); }
  std::size_t out() const noexcept { return weight.cols(); }
};

/// Which pooling the two attention modules use. The ablations replace
/// attention with unconditioned mean pooling over patch tokens.
enum class Ablation : std::uint8_t {
  kNone = 0,       // text-enhanced object + object-guided attribute attention
  kNoTeo = 1,      // object feature: class token + mean of deep patches
  kNoTeoNoOga = 2, // additionally, attribute feature: mean of fused shallow patches
};

const char* to_string(Ablation a);
bool parse_ablation(const std::string& text, Ablation& out);

struct ModelDims {
  std::size_t visual = 0;  // D
  std::size_t text = 0;    // d
  std::size_t blocks = 0;  // B
  std::size_t joint = 0;   // composition embedding width
};

struct CpfParams {
  Linear proj_obj;     // D -> d
  Linear proj_attr;    // D -> d
  Linear fusion;       // B*D -> D, applied per patch token
  Linear comp_visual;  // 2D -> joint
  Linear comp_text;    // 2d -> joint
  double temperature = 0.05;
  double alpha_attr = 0.6;
  double alpha_obj = 0.4;
  Ablation ablation = Ablation::kNone;

  ModelDims dims() const;
  /// Every trainable tensor in a fixed order (weights then biases, module by module).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  static std::vector<std::string> tensor_names();

  /// Throws ConfigError on non-finite weights, non-positive temperature or
  /// negative loss weights; DimensionError on inconsistent shapes.
  void validate() const;
};

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
CpfParams init_params(const ModelDims& dims, std::uint64_t seed);

// --- Tape bindings -------------------------------------------------------

struct LinearVars {
  Var weight;
  Var bias;
};

struct ParamVars {
  LinearVars proj_obj, proj_attr, fusion, comp_visual, comp_text;
};

struct TextVars {
  Var attr;  // M x d
  Var obj;   // N x d
};

/// Registers every parameter tensor as a differentiable leaf.
ParamVars bind_params(Tape& tape, CpfParams& params);
/// Records parameters as constants (inference).
ParamVars bind_constant_params(Tape& tape, const CpfParams& params);
/// Text matrices are leaves only when the embeddings are not frozen.
TextVars bind_text(Tape& tape, TextEmbeddings& text);
TextVars bind_constant_text(Tape& tape, const TextEmbeddings& text);

Var apply_linear(Tape& tape, const LinearVars& layer, Var x);

/// Tape-level attention: weights = softmax(q K^T / scale), out = weights V.
struct AttentionVars {
  Var out;
  Var weights;
};
AttentionVars scaled_dot_attention(Tape& tape, Var q, Var keys, Var values, double scale);

// --- Forward pieces ------------------------------------------------------

/// Fuses B raw shallow blocks (each T x D) into T x D tokens via one linear
/// layer over the per-token concatenation.
Var fuse_shallow(Tape& tape, std::span<const Var> blocks, const LinearVars& fusion);

/// q = softmax(proj_obj(deep_class) W_o^T / sqrt(d)) W_o.
Var textual_descriptor(Tape& tape, Var deep_class, Var obj_text, const LinearVars& proj_obj);

/// v_o = deep_class + softmax(q proj_obj(patches)^T / sqrt(d)) patches.
/// Keys are the projected d-dim patches, values the raw D-dim patches.
Var text_enhanced_object(Tape& tape, Var deep_class, Var deep_patches, Var descriptor,
                         const LinearVars& proj_obj);

/// v_a = softmax(v_o V_l^T / sqrt(D)) V_l over the fused shallow tokens.
Var object_guided_attribute(Tape& tape, Var object_feature, Var shallow_tokens);

/// Unnormalized object logits proj_obj(v_o) W_o^T (1 x N).
Var object_logits(Tape& tape, Var object_feature, Var obj_text, const LinearVars& proj_obj);
/// Unnormalized attribute logits proj_attr(v_a) W_a^T (1 x M).
Var attribute_logits(Tape& tape, Var attr_feature, Var attr_text, const LinearVars& proj_attr);

/// Composition text features f_t([W_a[i], W_o[j]]) for each candidate (K x joint).
Var composition_text(Tape& tape, const TextVars& text, std::span<const Pair> candidates,
                     const LinearVars& comp_text);
/// Composition logits f_v([v_a, v_o]) . w_c for each candidate (1 x K).
Var composition_logits(Tape& tape, Var attr_feature, Var object_feature, Var comp_text_features,
                       const LinearVars& comp_visual);

/// softmax(logits / temperature) as a plain vector.
std::vector<double> tempered_probs(const Tensor& logits, double temperature);

struct SampleVars {
  Var object_feature;  // v_o
  Var attr_feature;    // v_a
  Var obj_logits;
  Var attr_logits;
  Var comp_logits;
};

/// Full per-image forward pass on the tape. `comp_text_features` comes from
/// composition_text() for the active candidate list.
SampleVars forward_sample(Tape& tape, const FeatureBundle& sample, const ParamVars& params,
                          const TextVars& text, Var comp_text_features, Ablation ablation);

struct LossVars {
  Var composition;
  Var attribute;
  Var object;
  Var total;
};

/// Batch-mean losses and total = L_com + alpha_attr L_att + alpha_obj L_obj.
/// Every sample's label must be in `candidates`, else DataError.
LossVars forward_losses(Tape& tape, std::span<const FeatureBundle> batch,
                        const ParamVars& params, const TextVars& text,
                        const CpfParams& config, const CandidateList& candidates);

/// Per-image probabilities used by inference.
struct Probabilities {
  std::vector<double> composition;  // over the candidate list
  std::vector<double> attribute;    // M
  std::vector<double> object;       // N
};

/// Inference-only scorer with composition text features cached for one
/// candidate list. score() is const and safe to call from many threads.
class Scorer {
 public:
  Scorer(const CpfParams& params, const TextEmbeddings& text, CandidateList candidates);

  Probabilities score(const FeatureBundle& sample) const;
  const CandidateList& candidates() const noexcept { return candidates_; }

 private:
  CpfParams params_;
  TextEmbeddings text_;
  CandidateList candidates_;
  Tensor comp_text_;
};

}  // namespace cpf
