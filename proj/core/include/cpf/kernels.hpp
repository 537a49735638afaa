#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cpf/tensor.hpp"

// Pure forward kernels. These never touch gradients; the tape in tape.hpp
// records them and supplies the matching backward rules.
namespace cpf::kernels {

enum class Transpose { kNo, kYes };

/// C = A * B, or A * B^T when `tb` is kYes. Both operands must be rank-2
/// (rank-1 tensors are treated as a single row).
Tensor matmul(const Tensor& a, const Tensor& b, Transpose tb = Transpose::kNo);

/// Elementwise a + b. `b` may also be a single row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);

/// Concatenate along the last dimension; all parts need the same row count.
Tensor concat_lastdim(std::span<const Tensor> parts);

/// Row-wise softmax over the last dimension, computed with max-subtraction.
/// Throws NumericError on any non-finite input.
Tensor softmax_lastdim(const Tensor& x);

/// Gather rows of a matrix (duplicates allowed).
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);

struct Attention {
  Tensor out;      // 1 x D
  Tensor weights;  // 1 x t
};

/// weights = softmax(q K^T / scale), out = weights V.
Attention scaled_dot_attention(const Tensor& q, const Tensor& keys,
                               const Tensor& values, double scale);

/// Stable log(softmax(logits / temperature)) over a flat logit vector.
std::vector<double> log_softmax(std::span<const double> logits, double temperature);

/// -log softmax(logits / temperature)[label].
double cross_entropy(std::span<const double> logits, std::size_t label,
                     double temperature);

}  // namespace cpf::kernels
