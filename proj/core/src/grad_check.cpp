#include "cpf/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cpf/errors.hpp"

namespace cpf {

namespace {

void validate_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("grad_check eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
}

double scalar_value(const Tape& tape, Var v) {
  const Tensor& t = tape.value(v);
  if (t.size() != 1) throw ContractError("grad_check function must return a scalar");
  const double out = t[0];
  if (!std::isfinite(out)) throw NumericError("grad_check: non-finite function value");
  return out;
}

void fold_error(GradCheckResult& r, std::size_t i, double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  const double err = std::abs(analytic - numeric) / denom;
  if (i == 0 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = i;
    r.analytic = analytic;
    r.numeric = numeric;
  }
}

GradCheckResult check_tensor(const LossFn& fn, Tensor& x, double eps, TapeOptions opts) {
  x.zero_grad();
  {
    Tape tape(opts);
    Var loss = fn(tape);
    scalar_value(tape, loss);
    tape.backward(loss);
  }
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  GradCheckResult result;
  auto data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    double plus = 0.0;
    {
      Tape tape(opts);
      plus = scalar_value(tape, fn(tape));
    }
    data[i] = saved - eps;
    double minus = 0.0;
    {
      Tape tape(opts);
      minus = scalar_value(tape, fn(tape));
    }
    data[i] = saved;
    fold_error(result, i, analytic[i], (plus - minus) / (2.0 * eps));
  }
  return result;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const Tensor& x, double eps,
                           TapeOptions tape_options) {
  validate_eps(eps);
  Tensor input = x;
  LossFn wrapped = [&](Tape& tape) { return fn(tape, tape.parameter(input)); };
  return check_tensor(wrapped, input, eps, tape_options);
}

std::vector<GradCheckResult> grad_check_params(const LossFn& fn,
                                               std::span<Tensor* const> params, double eps,
                                               TapeOptions tape_options) {
  validate_eps(eps);
  for (Tensor* p : params) p->zero_grad();
  std::vector<GradCheckResult> out;
  out.reserve(params.size());
  for (Tensor* p : params) {
    // Other parameters accumulate gradients too; only p's buffer is read.
    out.push_back(check_tensor(fn, *p, eps, tape_options));
  }
  for (Tensor* p : params) p->drop_grad();
  return out;
}

}  // namespace cpf
