#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cpf/tape.hpp"
#include "cpf/tensor.hpp"

namespace cpf {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
};

/// Scalar function of one input tensor, built on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;
/// Scalar loss that registers its own parameters via Tape::parameter.
using LossFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `fn` at `x` against central differences.
///
/// The per-coordinate error is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `eps` must lie in [1e-7, 1e-3]; a non-finite function value throws NumericError.
GradCheckResult grad_check(const ScalarFn& fn, const Tensor& x, double eps,
                           TapeOptions tape_options = {});

/// Same check for every tensor in `params`, which `fn` reads through
/// Tape::parameter. Parameters are perturbed in place and restored.
std::vector<GradCheckResult> grad_check_params(const LossFn& fn,
                                               std::span<Tensor* const> params, double eps,
                                               TapeOptions tape_options = {});

}  // namespace cpf
