#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "cpf/errors.hpp"
#include "cpf/grad_check.hpp"
#include "support/toy_tables.hpp"

namespace cpf {
namespace {

Var weighted_sum(Tape& tape, Var x, const Tensor& w) {
  return tape.matmul(x, tape.constant(w), kernels::Transpose::kYes);
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(2);
  const Tensor x = toy::random_tensor(rng, {1, 6});
  const Tensor w = toy::random_tensor(rng, {1, 6});
  const auto r = grad_check([&](Tape& t, Var v) { return weighted_sum(t, v, w); }, x, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-10);
}

TEST(GradCheck, SoftmaxThenPick) {
  Rng rng(5);
  const Tensor x = toy::random_tensor(rng, {1, 5});
  Tensor pick({1, 5});
  pick[3] = 1.0;
  const auto r = grad_check(
      [&](Tape& t, Var v) { return weighted_sum(t, t.softmax_lastdim(v), pick); }, x, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(GradCheck, ConstantFunctionHasZeroGradient) {
  const Tensor x = Tensor::row({1, 2, 3});
  const auto r = grad_check([](Tape& t, Var) { return t.constant(Tensor::row({4.0})); }, x, 1e-5);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.analytic, 0.0);
}

TEST(GradCheck, InjectedSoftmaxFaultIsCaught) {
  Rng rng(6);
  const Tensor x = toy::random_tensor(rng, {1, 4});
  Tensor pick({1, 4});
  pick[0] = 1.0;
  TapeOptions faulty;
  faulty.inject_softmax_fault = true;
  const auto r = grad_check(
      [&](Tape& t, Var v) { return weighted_sum(t, t.softmax_lastdim(v), pick); }, x, 1e-5, faulty);
  EXPECT_GT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ParamsArePerturbedAndRestored) {
  Rng rng(8);
  Tensor a = toy::random_tensor(rng, {2, 3});
  Tensor b = toy::random_tensor(rng, {1, 3});
  const Tensor a0 = a;
  const Tensor b0 = b;
  Tensor* params[] = {&a, &b};
  const auto results = grad_check_params(
      [&](Tape& t) {
        Var prod = t.matmul(t.parameter(b), t.parameter(a), kernels::Transpose::kYes);
        Var sm = t.softmax_lastdim(prod);
        return t.cross_entropy(sm, 1, 0.5);
      },
      params, 1e-5);
  ASSERT_EQ(results.size(), 2u);
  for (const auto& r : results) EXPECT_LT(r.max_rel_error, 1e-7);
  EXPECT_EQ(a, a0);
  EXPECT_EQ(b, b0);
}

TEST(GradCheck, Errors) {
  const Tensor x = Tensor::row({1.0});
  auto id = [](Tape&, Var v) { return v; };
  EXPECT_THROW(grad_check(id, x, 1e-2), ContractError);
  EXPECT_THROW(grad_check(id, x, 1e-9), ContractError);
  EXPECT_THROW(grad_check(id, Tensor::row({1.0, 2.0}), 1e-5), ContractError);
  EXPECT_THROW(grad_check([](Tape& t, Var v) { return t.scale(v, std::numeric_limits<double>::infinity()); },
                          x, 1e-5),
               NumericError);
}

}  // namespace
}  // namespace cpf
