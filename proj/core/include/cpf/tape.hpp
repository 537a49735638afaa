#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cpf/kernels.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kMatmul,
  kAdd,
  kConcatLastDim,
  kSoftmaxLastDim,
  kScale,
  kCrossEntropy,
  kSelectRows,
};

const char* to_string(OpKind op);

struct TapeOptions {
  /// Negative-control hook for the gradient checker: softmax backward drops
  /// its coupling term, producing deliberately wrong gradients.
  bool inject_softmax_fault = false;
};

/// Append-only record of a forward computation for reverse-mode AD.
///
/// Values that depend on no parameter are stored as constants and carry no
/// backward state. `backward` walks nodes in strict reverse insertion order,
/// accumulates into every registered parameter's grad buffer and clears the
/// tape. One tape belongs to one thread.
class Tape {
 public:
  explicit Tape(TapeOptions options = {}) : options_(options) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  /// Registers `param` as a differentiable leaf. `param` must outlive the
  /// next backward() or clear().
  Var parameter(Tensor& param);

  Var matmul(Var a, Var b, kernels::Transpose tb = kernels::Transpose::kNo);
  Var add(Var a, Var b);
  Var concat_lastdim(std::span<const Var> parts);
  Var softmax_lastdim(Var x);
  Var scale(Var x, double factor);
  /// Scalar loss -log softmax(logits / temperature)[label] over the flattened logits.
  Var cross_entropy(Var logits, std::size_t label, double temperature);
  Var select_rows(Var x, std::vector<std::size_t> rows);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Propagates d(loss)/d(.) to every parameter, then clears the tape.
  /// Throws ContractError if `loss` is not a single element.
  void backward(Var loss);
  void clear() noexcept { nodes_.clear(); }

 private:
  struct Node {
    OpKind op = OpKind::kConstant;
    bool requires_grad = false;
    std::uint32_t inputs[2] = {0, 0};
    std::vector<std::uint32_t> extra_inputs;  // concat parts
    Tensor value;
    std::vector<double> grad;
    // Saved state for the backward rule.
    Tensor* param = nullptr;
    kernels::Transpose transpose = kernels::Transpose::kNo;
    double factor = 1.0;
    std::size_t label = 0;
    std::vector<double> saved;  // softmax probabilities for cross-entropy
    std::vector<std::size_t> rows;
  };

  Var push(Node node);
  Node& node(Var v) { return nodes_.at(v.id); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  void backward_node(Node& n);
  std::vector<double>& grad_of(std::uint32_t id);

  TapeOptions options_;
  std::vector<Node> nodes_;
};

}  // namespace cpf
