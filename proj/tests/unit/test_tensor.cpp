// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ltn/ltn.hpp"
#include "oracles.hpp"

using namespace ltn;

namespace {

Value param(Shape s, std::mt19937_64& g, const std::string& name, double lo = -1.0, double hi = 1.0) {
  return Value::parameter(s, oracle::random_vec(g, s.numel(), lo, hi), name);
}

void expect_grad_ok(const std::function<Value()>& f, std::vector<Value> leaves, const std::string& what) {
  const auto r = grad_check(f, std::move(leaves));
  EXPECT_TRUE(r.passed) << what << " max rel error " << r.max_rel_error();
}

}  // namespace

TEST(Forward, MatvecExamples) {
  const Value I = Value::constant(Shape{2, 2}, {1, 0, 0, 1});
  const Value v = Value::vector({3, 4});
  const Value a = matmul(I, v);
  EXPECT_EQ(a[0], 3.0);
  EXPECT_EQ(a[1], 4.0);
  const Value z = matmul(Value::zeros(Shape{2, 2}), v);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
  const Value m = matmul(Value::constant(Shape{2, 2}, {1, 2, 3, 4}), Value::vector({1, 1}));
  EXPECT_EQ(m[0], 3.0);
  EXPECT_EQ(m[1], 7.0);
}

TEST(Forward, ShapeMismatchNamesOpAndShapes) {
  const Value a = Value::zeros(Shape{2, 3});
  const Value b = Value::zeros(Shape{2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(Value::zeros(Shape{3}), Value::zeros(Shape{4})), ShapeError);
  EXPECT_THROW(mul(Value::zeros(Shape{2, 2}), Value::zeros(Shape{2})), ShapeError);
}

TEST(Backward, IdentityAndSigmoid) {
  Value x = Value::parameter(Shape{}, {1.7}, "x");
  backward(x);
  EXPECT_EQ(x.grad()[0], 1.0);

  Value y = Value::parameter(Shape{}, {0.0}, "y");
  backward(sigmoid(y));
  EXPECT_DOUBLE_EQ(y.grad()[0], 0.25);
}

TEST(Backward, RejectsNonScalarRoot) {
  Value x = Value::parameter(Shape{2}, {1, 2}, "x");
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, SharedLeafAccumulatesBothPaths) {
  Value x = Value::parameter(Shape{}, {1.5}, "x");
  // d/dx (x*x + 3x) = 2x + 3
  backward(add(mul(x, x), scale(x, 3.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3);
}

TEST(Backward, SumOfMatvecMatchesFiniteDifferences) {
  std::mt19937_64 g(3);
  Value A = param(Shape{3, 3}, g, "A");
  Value v = param(Shape{3}, g, "v");
  expect_grad_ok([&] { return sum(matmul(A, v)); }, {A, v}, "sum(A v)");
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Value x = Value::parameter(Shape{}, {2.0}, "x");
  Value y;
  {
    NoGradGuard ng;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(GradCheck, Polynomial) {
  Value x = Value::parameter(Shape{}, {2.0}, "x");
  backward(square(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  const auto r = grad_check([&] { return square(x); }, {x});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error(), 1e-8);
}

TEST(GradCheck, WrongLocalGradientIsReportedByLeaf) {
  Value x = Value::parameter(Shape{3}, {0.3, -0.2, 0.9}, "bad_leaf");
  Value ok = Value::parameter(Shape{3}, {0.1, 0.2, 0.3}, "good_leaf");
  auto broken_square = [](const Value& a) {
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * a[i];
    return make_op("broken_square", a.shape(), std::move(y), {a}, [](detail::Node& self) {
      auto& g = detail::pgrad(self, 0);
      const auto& x = detail::pdata(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 3.0 * x[i];
    });
  };
  const auto r = grad_check([&] { return sum(add(broken_square(x), square(ok))); }, {x, ok});
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.failing().size(), 1u);
  EXPECT_EQ(r.failing().front(), "bad_leaf");
}

TEST(GradCheck, NonFiniteIsReported) {
  Value x = Value::parameter(Shape{}, {0.0}, "x");
  const auto r = grad_check([&] { return log(x); }, {x});
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.leaves.front().finite);
}

class PrimitiveGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  std::mt19937_64 g(GetParam());
  Value A = param(Shape{3, 4}, g, "A");
  Value B = param(Shape{3, 4}, g, "B");
  Value M = param(Shape{4, 2}, g, "M");
  Value v = param(Shape{4}, g, "v");
  Value w = param(Shape{3}, g, "w");
  Value bias = param(Shape{4}, g, "bias");
  Value pos = param(Shape{3, 4}, g, "pos", 0.5, 2.0);
  Value s = param(Shape{}, g, "s");
  Value img = param(Shape{2, 5, 5}, g, "img");
  Value kw = param(Shape{3, 2 * 9}, g, "kw");
  Value kb = param(Shape{3}, g, "kb");
  const Value proj = Value::constant(Shape{3, 4}, oracle::random_vec(g, 12));
  auto dot = [&](const Value& y) { return sum(mul(y, proj)); };

  expect_grad_ok([&] { return dot(add(A, B)); }, {A, B}, "add");
  expect_grad_ok([&] { return dot(add(A, bias)); }, {A, bias}, "add(bias)");
  expect_grad_ok([&] { return dot(sub(A, B)); }, {A, B}, "sub");
  expect_grad_ok([&] { return dot(sub(A, bias)); }, {A, bias}, "sub(bias)");
  expect_grad_ok([&] { return dot(mul(A, B)); }, {A, B}, "mul");
  expect_grad_ok([&] { return dot(neg(A)); }, {A}, "neg");
  expect_grad_ok([&] { return dot(scale(A, -1.7)); }, {A}, "scale");
  expect_grad_ok([&] { return dot(scale_by(A, s)); }, {A, s}, "scale_by");
  expect_grad_ok([&] { return dot(add_scalar(A, 0.3)); }, {A}, "add_scalar");
  expect_grad_ok([&] { return dot(tanh(A)); }, {A}, "tanh");
  expect_grad_ok([&] { return dot(sigmoid(A)); }, {A}, "sigmoid");
  expect_grad_ok([&] { return dot(exp(A)); }, {A}, "exp");
  expect_grad_ok([&] { return dot(log(pos)); }, {pos}, "log");
  expect_grad_ok([&] { return dot(sqrt(pos)); }, {pos}, "sqrt");
  expect_grad_ok([&] { return dot(square(A)); }, {A}, "square");
  expect_grad_ok([&] { return dot(clamp(scale(A, 0.5), -0.25, 0.25)); }, {A}, "clamp");
  expect_grad_ok([&] { return dot(relu(A)); }, {A}, "relu");
  expect_grad_ok([&] { return sum(matmul(A, M)); }, {A, M}, "matmul(mm)");
  expect_grad_ok([&] { return sum(mul(matmul(A, v), w)); }, {A, v, w}, "matmul(mv)");
  expect_grad_ok([&] { return sum(mul(matmul(w, A), v)); }, {A, v, w}, "matmul(vm)");
  expect_grad_ok([&] { return sum(mul(transpose(A), transpose(proj))); }, {A}, "transpose");
  Value lb = param(Shape{2}, g, "lb");
  expect_grad_ok([&] { return sum(mul(linear(A, transpose(M), lb), matmul(proj, M))); }, {A, M, lb}, "linear");
  expect_grad_ok([&] { return mean(mul(A, B)); }, {A, B}, "mean");
  expect_grad_ok([&] { return sum(mul(sum_last(A), w)); }, {A, w}, "sum_last");
  expect_grad_ok([&] { return sum(mul(mean_rows(A), v)); }, {A, v}, "mean_rows");
  expect_grad_ok([&] { return dot(softmax(A)); }, {A}, "softmax");
  expect_grad_ok([&] { return dot(log_softmax(A)); }, {A}, "log_softmax");
  expect_grad_ok([&] { return sum(mul(concat({A, B}), concat({proj, proj}))); }, {A, B}, "concat");
  expect_grad_ok([&] { return sum(mul(slice(A, 1, 3), slice(proj, 0, 2))); }, {A}, "slice");
  expect_grad_ok([&] { return sum(mul(row(A, 2), v)); }, {A, v}, "row");
  expect_grad_ok([&] { return dot(stack({v, bias, mul(v, bias)})); }, {v, bias}, "stack");
  expect_grad_ok([&] { return dot(repeat_rows(v, 3)); }, {v}, "repeat_rows");
  expect_grad_ok([&] { return sum(mul(reshape(A, Shape{12}), reshape(proj, Shape{12}))); }, {A}, "reshape");
  expect_grad_ok([&] { return sum(mul(conv2d(img, kw, kb, 3, 2, 1), conv2d(img, kw, kb, 3, 2, 1))); }, {img, kw, kb},
                 "conv2d");
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range<std::uint64_t>(1, 11));

TEST(Detach, BlocksGradient) {
  Value x = Value::parameter(Shape{}, {2.0}, "x");
  backward(add(mul(detach(x), x), x));
  // d/dx (c*x + x) with c = 2
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 g(9);
  const auto xs = oracle::random_vec(g, 2 * 8 * 8);
  const Value x = Value::constant(Shape{2, 8, 8}, xs);
  const Value w = Value::constant(Shape{3, 18}, oracle::random_vec(g, 54));
  const Value b = Value::constant(Shape{3}, oracle::random_vec(g, 3));
  std::size_t Ho = 0, Wo = 0;
  const auto ref = oracle::conv2d(xs, 2, 8, 8, w, b, 3, 2, 1, Ho, Wo);
  const Value y = conv2d(x, w, b, 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{3, Ho, Wo}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
}

TEST(Adam, ZeroGradientIsNoOp) {
  Value p = Value::parameter(Shape{3}, {0.5, -1.0, 2.0}, "p");
  ParamSet ps;
  ps.add(p);
  AdamState st;
  for (int i = 0; i < 25; ++i) {
    p.mutable_grad();  // allocate zeros
    adam_step(ps, st);
  }
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], -1.0);
  EXPECT_EQ(p[2], 2.0);
  EXPECT_EQ(st.step_count, 25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Value p = Value::parameter(Shape{}, {1.0}, "p");
  ParamSet ps;
  ps.add(p);
  AdamState st;
  st.learning_rate = 0.01;
  p.mutable_grad()[0] = 1.0;
  adam_step(ps, st);
  EXPECT_NEAR(1.0 - p[0], 0.01, 1e-9);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  Value x = Value::parameter(Shape{}, {0.0}, "x");
  ParamSet ps;
  ps.add(x);
  AdamState st;
  st.learning_rate = 0.1;
  for (int i = 0; i < 100; ++i) {
    backward(square(add_scalar(x, -3.0)));
    adam_step(ps, st);
  }
  EXPECT_LT(std::abs(x[0] - 3.0), 0.1);
}

TEST(Adam, RejectsNonTrainableAndStateDrift) {
  ParamSet ps;
  EXPECT_THROW(ps.add(Value::constant(Shape{1}, {0.0})), std::invalid_argument);
  ps.add(Value::parameter(Shape{}, {0.0}, "a"));
  AdamState st;
  adam_step(ps, st);
  ps.add(Value::parameter(Shape{}, {0.0}, "late"));
  try {
    adam_step(ps, st);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("tracks 1 parameters, got 2"), std::string::npos);
  }
}

TEST(ClipGradNorm, RescalesToCap) {
  Value x = Value::parameter(Shape{2}, {0, 0}, "x");
  x.mutable_grad()[0] = 30;
  x.mutable_grad()[1] = 40;
  ParamSet ps;
  ps.add(x);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 50.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(Init, WeightsWithinFanInBound) {
  Rng rng(4);
  const Value w = init_weight(rng, 5, 16, "w");
  for (double v : w.data()) EXPECT_LE(std::abs(v), 0.25);
  const Value b = init_bias(5, "b");
  for (double v : b.data()) EXPECT_EQ(v, 0.0);
}
