#include <gtest/gtest.h>

#include <cmath>

#include "qotr/errors.hpp"
#include "qotr/gradcheck.hpp"
#include "test_support.hpp"

using namespace qotr;
using qotr::testing::randn;

TEST(Autograd, SumGivesOnes) {
  Graph<double> g;
  Tensor<double> x({2, 3}, 0.7);
  g.backward(sum(g.param(x)));
  const Tensor<double>* gr = g.grad(x);
  ASSERT_NE(gr, nullptr);
  for (double v : gr->data()) EXPECT_EQ(v, 1.0);
}

TEST(Autograd, SquareAtThree) {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::scalar(3.0);
  g.backward(sum(square(g.param(x))));
  EXPECT_EQ(g.grad(x)->item(), 6.0);
}

TEST(Autograd, NonScalarLossRejected) {
  Graph<double> g;
  Tensor<double> x({2}, 1.0);
  EXPECT_THROW(g.backward(square(g.param(x))), ContractError);
}

TEST(Autograd, FanOutAccumulates) {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::scalar(2.0);
  Var<double> v = g.param(x);
  // x*x + x: both uses reach the same buffer.
  g.backward(sum(add(mul(v, v), v)));
  EXPECT_EQ(g.grad(x)->item(), 5.0);
}

TEST(Autograd, ParamBoundOncePerGraph) {
  Graph<double> g;
  Tensor<double> x({2}, 1.0);
  Var<double> a = g.param(x), b = g.param(x);
  EXPECT_EQ(a.id(), b.id());
}

TEST(Autograd, ConstantsAndFrozenGetNoGradient) {
  Graph<double> g;
  Tensor<double> w({2}, 1.0), f({2}, 2.0);
  g.freeze(f);
  Var<double> c = g.constant(Tensor<double>({2}, 3.0));
  Var<double> loss = sum(mul(mul(g.param(w), g.param(f)), c));
  EXPECT_FALSE(c.requires_grad());
  g.backward(loss);
  EXPECT_NE(g.grad(w), nullptr);
  EXPECT_EQ(g.grad(f), nullptr);
  EXPECT_FALSE(g.tape().has_grad(c.id()));
}

TEST(Autograd, NodesRecordedInTopologicalOrder) {
  Graph<double> g;
  Tensor<double> x({3}, 1.0);
  Var<double> a = g.param(x);
  Var<double> b = square(a);
  Var<double> c = sum(b);
  EXPECT_LT(a.id(), b.id());
  EXPECT_LT(b.id(), c.id());
}

TEST(Autograd, MatmulSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor<double> A = randn({3, 4}, 1.0, rng), B = randn({4, 2}, 1.0, rng);
  auto f = [&](Graph<double>& g) { return sum(matmul(g.param(A), g.param(B))); };
  EXPECT_LE(grad_check(f, {&A, &B}).max_rel_error, 1e-6);
}

TEST(GradCheck, LinearIsExact) {
  std::mt19937_64 rng(1);
  Tensor<double> x = randn({10}, 1.0, rng);
  Tensor<double> c = randn({10}, 1.0, rng);
  auto f = [&](Graph<double>& g) { return sum(mul(g.param(x), g.constant(c))); };
  EXPECT_LE(grad_check(f, {&x}).max_rel_error, 1e-9);
}

TEST(GradCheck, NonFiniteFunctionRejected) {
  Tensor<double> x({1}, 1.0);
  auto f = [&](Graph<double>& g) {
    return sum(scale(g.param(x), std::numeric_limits<double>::infinity()));
  };
  EXPECT_THROW(grad_check(f, {&x}), NumericError);
}

TEST(GradCheck, StepOutsideRangeRejected) {
  Tensor<double> x({1}, 1.0);
  auto f = [&](Graph<double>& g) { return sum(g.param(x)); };
  EXPECT_THROW(grad_check(f, {&x}, {1e-3}), ContractError);
  EXPECT_THROW(grad_check(f, {&x}, {1e-8}), ContractError);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A rule that deliberately doubles the gradient.
  Tensor<double> x({2}, 1.5);
  auto f = [&](Graph<double>& g) {
    Var<double> v = g.param(x);
    Var<double> y = g.record(v.value(), {v}, [id = v.id()](Tape<double>& t, std::size_t self) {
      Tensor<double>& gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += 2 * t.grad(self)[i];
    });
    return sum(y);
  };
  EXPECT_GT(grad_check(f, {&x}).max_rel_error, 0.3);
}
