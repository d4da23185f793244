#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tmrn/gradcheck.hpp"
#include "tmrn/graph.hpp"

using namespace tmrn;
using test::rand_tensor;

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimError);
  EXPECT_THROW(Tensor({2, 0}), DimError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  t.ensure_grad();
  ASSERT_TRUE(t.grad.has_value());
  EXPECT_EQ(t.grad->size(), t.size());
}

TEST(Tensor, NonFiniteIsDetectable) {
  Tensor t = Tensor::row({1.0, std::nan(""), 3.0});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.require_finite("test"), ValueError);
  Tensor ok = Tensor::row({1.0, 2.0});
  EXPECT_NO_THROW(ok.require_finite("test"));
}

// --- matmul -----------------------------------------------------------------

TEST(MatMul, IdentityTimesIdentity) {
  Graph g;
  Var a = g.constant(Tensor::identity(2));
  Var b = g.constant(Tensor::identity(2));
  Var c = matmul(a, b);
  EXPECT_TRUE(c.value().bit_equal(Tensor::identity(2)));
}

TEST(MatMul, HandOracle) {
  Graph g;
  Var a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = g.constant(Tensor::matrix({{1}, {1}}));
  Var c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c.value()(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(c.value()(1, 0), 7.0);
}

TEST(MatMul, ZeroAnnihilation) {
  Rng rng(7);
  Graph g;
  Var a = g.constant(Tensor::zeros({3, 4}));
  Var b = g.constant(rand_tensor(rng, {4, 2}));
  Var c = matmul(a, b);
  EXPECT_TRUE(c.value().bit_equal(Tensor::zeros({3, 2})));
}

TEST(MatMul, ShapeMismatchThrows) {
  Graph g;
  Var a = g.constant(Tensor::zeros({2, 3}));
  Var b = g.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(matmul(a, b), DimError);
}

// --- softmax ----------------------------------------------------------------

TEST(Softmax, Symmetry) {
  Graph g;
  Var y = softmax_rows(g.constant(Tensor::row({0.0, 0.0})));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y.value()(0, 1), 0.5);
}

TEST(Softmax, DirectEvaluationOracle) {
  // Expected values frozen from direct exp/sum evaluation.
  Graph g;
  Var y = softmax_rows(g.constant(Tensor::row({1.0, 2.0, 3.0})));
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  const double s = e1 + e2 + e3;
  EXPECT_NEAR(y.value()(0, 0), 0.09003057, 1e-8);
  EXPECT_NEAR(y.value()(0, 1), 0.24472847, 1e-8);
  EXPECT_NEAR(y.value()(0, 2), 0.66524096, 1e-8);
  EXPECT_NEAR(y.value()(0, 0), e1 / s, 1e-15);
  EXPECT_NEAR(y.value()(0, 1), e2 / s, 1e-15);
  EXPECT_NEAR(y.value()(0, 2), e3 / s, 1e-15);
}

TEST(Softmax, MaxShiftStability) {
  Graph g;
  Var y = softmax_rows(g.constant(Tensor::row({1000.0, 1000.0})));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y.value()(0, 1), 0.5);
  EXPECT_TRUE(y.value().all_finite());
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(7);
    const double mag = (rep % 3 == 0) ? 1e3 : 2.0;
    Graph g;
    Var y = softmax_rows(g.constant(rand_tensor(rng, {m, n}, -mag, mag)));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        s += y.value()(i, j);
        EXPECT_GE(y.value()(i, j), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, NonFiniteInputThrows) {
  Graph g;
  Var x = g.constant(Tensor::row({1.0, std::numeric_limits<double>::infinity()}));
  EXPECT_THROW(softmax_rows(x), ValueError);
}

// --- layer_norm ---------------------------------------------------------------

TEST(LayerNorm, ConstantRowMapsToBeta) {
  Graph g;
  Var x = g.constant(Tensor::row({5.0, 5.0, 5.0}));
  Var gamma = g.constant(Tensor::ones({3}));
  Var beta = g.constant(Tensor::zeros({3}));
  Var y = layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y.value()(0, j), 0.0);
}

TEST(LayerNorm, ClosedFormOracle) {
  // mean 2, population std sqrt(2/3): (1,2,3) -> -1.22474487, 0, +1.22474487
  Graph g;
  Var x = g.constant(Tensor::row({1.0, 2.0, 3.0}));
  Var gamma = g.constant(Tensor::ones({3}));
  Var beta = g.constant(Tensor::zeros({3}));
  Var y = layer_norm(x, gamma, beta, 1e-12);
  EXPECT_NEAR(y.value()(0, 0), -1.22474487, 1e-8);
  EXPECT_NEAR(y.value()(0, 1), 0.0, 1e-9);
  EXPECT_NEAR(y.value()(0, 2), 1.22474487, 1e-8);
  const double expect = (3.0 - 2.0) / std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(y.value()(0, 2), expect, 1e-9);
}

TEST(LayerNorm, AffineOverride) {
  Rng rng(3);
  Graph g;
  Var x = g.constant(rand_tensor(rng, {2, 4}));
  Var gamma = g.constant(Tensor::zeros({4}));
  Var beta = g.constant(Tensor::full({4}, 7.0));
  Var y = layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(y.value()(i, j), 7.0);
}

TEST(LayerNorm, RowStatisticsProperty) {
  Rng rng(5);
  Graph g;
  Var x = g.constant(rand_tensor(rng, {4, 8}, -3.0, 3.0));
  Var gamma = g.constant(Tensor::ones({8}));
  Var beta = g.constant(Tensor::zeros({8}));
  Var y = layer_norm(x, gamma, beta, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mu += y.value()(i, j);
    mu /= 8.0;
    for (std::size_t j = 0; j < 8; ++j) var += (y.value()(i, j) - mu) * (y.value()(i, j) - mu);
    var /= 8.0;
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

// --- elementwise and structural ops -------------------------------------------

TEST(Elementwise, SigmoidAtZero) {
  Graph g;
  Var y = sigmoid(g.constant(Tensor::row({0.0})));
  EXPECT_DOUBLE_EQ(y.value().at(0), 0.5);
}

TEST(Elementwise, SigmoidTanhRanges) {
  Rng rng(9);
  Graph g;
  // |x| <= 30 keeps 1 - sigmoid(x) representable in double precision.
  Var x = g.constant(rand_tensor(rng, {3, 3}, -30.0, 30.0));
  Var s = sigmoid(x);
  Var t = tanh(x);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_GT(s.value().at(i), 0.0);
    EXPECT_LT(s.value().at(i), 1.0);
    EXPECT_GE(t.value().at(i), -1.0);
    EXPECT_LE(t.value().at(i), 1.0);
  }
}

TEST(Elementwise, HadamardHandOracle) {
  Graph g;
  Var y = hadamard(g.constant(Tensor::row({1.0, 2.0})), g.constant(Tensor::row({3.0, 4.0})));
  EXPECT_DOUBLE_EQ(y.value().at(0), 3.0);
  EXPECT_DOUBLE_EQ(y.value().at(1), 8.0);
}

TEST(Structural, ConcatColsShape) {
  Graph g;
  Var a = g.constant(Tensor::zeros({2, 3}));
  Var b = g.constant(Tensor::zeros({2, 2}));
  Var c = concat_cols(a, b);
  EXPECT_EQ(c.value().shape(), (Shape{2, 5}));
}

TEST(Structural, BroadcastBiasOverRows) {
  Graph g;
  Var x = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = g.constant(Tensor::vector({10, 20}));
  Var y = add(x, b);
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 11.0);
  EXPECT_DOUBLE_EQ(y.value()(1, 1), 24.0);
}

TEST(Structural, IncompatibleBroadcastThrows) {
  Graph g;
  Var x = g.constant(Tensor::zeros({2, 3}));
  Var b = g.constant(Tensor::vector({1.0, 2.0}));  // length 2 vs 3 cols
  EXPECT_THROW(add(x, b), DimError);
  Var c = g.constant(Tensor::zeros({3, 3}));
  EXPECT_THROW(add(x, c), DimError);
}

// --- linear -------------------------------------------------------------------

TEST(Linear, IdentityTimesDiagonal) {
  Graph g;
  Var x = g.constant(Tensor::identity(2));
  Var w = g.constant(Tensor::matrix({{2, 0}, {0, 2}}));
  Var b = g.constant(Tensor::zeros({2}));
  Var y = linear(x, w, b);
  EXPECT_TRUE(y.value().bit_equal(Tensor::matrix({{2, 0}, {0, 2}})));
}

TEST(Linear, HandOracle) {
  Graph g;
  Var x = g.constant(Tensor::row({1.0, 1.0}));
  Var w = g.constant(Tensor::matrix({{1}, {1}}));
  Var b = g.constant(Tensor::vector({1.0}));
  Var y = linear(x, w, b);
  EXPECT_DOUBLE_EQ(y.value().at(0), 3.0);
}

TEST(Linear, BiasOnlyPath) {
  Graph g;
  Var x = g.constant(Tensor::zeros({1, 3}));
  Var w = g.constant(Tensor::zeros({3, 4}));
  Var b = g.constant(Tensor::vector({1.0, 2.0, 3.0, 4.0}));
  Var y = linear(x, w, b);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(y.value()(0, j), b.value().at(j));
}

// --- backward ----------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var x = g.input(Tensor::matrix({{1, 2}, {3, 4}}), true);
  Var loss = sum_all(x);
  g.backward(loss);
  for (double v : x.grad()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, SquareGradient) {
  Graph g;
  Var x = g.input(Tensor::row({3.0}), true);
  Var loss = sum_all(hadamard(x, x));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, FanOutAccumulation) {
  // Two consumers of x: x*x and 3x. d/dx = 2x + 3 = 7 at x=2.
  Graph g;
  Var x = g.input(Tensor::row({2.0}), true);
  Var loss = sum_all(add(hadamard(x, x), scale(x, 3.0)));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Backward, DoubleBackwardThrows) {
  Graph g;
  Var x = g.input(Tensor::row({1.0}), true);
  Var loss = sum_all(x);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), ValueError);
}

TEST(Backward, NonScalarLossThrows) {
  Graph g;
  Var x = g.input(Tensor::row({1.0, 2.0}), true);
  EXPECT_THROW(g.backward(x), DimError);
}

TEST(Backward, ParamSinkReceivesGradient) {
  Tensor w = Tensor::row({2.0, -1.0});
  w.requires_grad = true;
  Graph g;
  Var wv = g.param(w);
  Var loss = sum_all(hadamard(wv, wv));
  g.backward(loss);
  ASSERT_TRUE(w.grad.has_value());
  EXPECT_DOUBLE_EQ((*w.grad)[0], 4.0);
  EXPECT_DOUBLE_EQ((*w.grad)[1], -2.0);
}

TEST(Backward, UnusedParamGetsZeroGradBuffer) {
  Tensor w = Tensor::row({2.0});
  Tensor unused = Tensor::row({5.0});
  Graph g;
  Var wv = g.param(w);
  g.param(unused);
  g.backward(sum_all(wv));
  ASSERT_TRUE(unused.grad.has_value());
  EXPECT_DOUBLE_EQ((*unused.grad)[0], 0.0);
}

TEST(Backward, RandomCompositeMatchesFiniteDifferences) {
  // Five-op composite: matmul -> add bias -> tanh -> hadamard -> mean.
  Rng rng(21);
  std::vector<Tensor> inputs = {rand_tensor(rng, {3, 4}), rand_tensor(rng, {4, 2}),
                                rand_tensor(rng, {2}), rand_tensor(rng, {3, 2})};
  auto f = [](Graph& g, const std::vector<Var>& v) {
    Var h = tanh(add(matmul(v[0], v[1]), v[2]));
    return mean_all(hadamard(h, v[3]));
  };
  auto r = finite_diff_check(f, inputs, 1e-5, 1e-4);
  EXPECT_TRUE(r.pass) << "max rel err " << r.max_rel_err;
}

TEST(Determinism, BitIdenticalReruns) {
  Rng rng(33);
  Tensor a = rand_tensor(rng, {4, 4}), b = rand_tensor(rng, {4, 4});
  Tensor gmm = rand_tensor(rng, {4});
  Tensor beta = rand_tensor(rng, {4});
  auto run = [&]() {
    Graph g;
    Var x = softmax_rows(matmul(g.constant(a), g.constant(b)));
    Var y = layer_norm(x, g.constant(gmm), g.constant(beta), 1e-5);
    return y.value();
  };
  Tensor first = run();
  Tensor second = run();
  EXPECT_TRUE(first.bit_equal(second));
}

// --- finite_diff_check ---------------------------------------------------------

TEST(FiniteDiff, SumOfSquaresTight) {
  Rng rng(17);
  std::vector<Tensor> inputs = {rand_tensor(rng, {3, 3}, -2.0, 2.0)};
  auto f = [](Graph& g, const std::vector<Var>& v) { return sum_all(hadamard(v[0], v[0])); };
  auto r = finite_diff_check(f, inputs, 1e-5, 1e-6);
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(FiniteDiff, SoftmaxThenPick) {
  Rng rng(19);
  std::vector<Tensor> inputs = {rand_tensor(rng, {2, 5}, -2.0, 2.0)};
  auto f = [](Graph& g, const std::vector<Var>& v) {
    Var y = softmax_rows(v[0]);
    Var picked = slice_rows(y, 1, 1);
    return sum_all(hadamard(picked, picked));
  };
  auto r = finite_diff_check(f, inputs, 1e-5, 1e-4);
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(FiniteDiff, ZeroStepIsPreconditionError) {
  std::vector<Tensor> inputs = {Tensor::row({1.0})};
  auto f = [](Graph& g, const std::vector<Var>& v) { return sum_all(v[0]); };
  EXPECT_THROW(finite_diff_check(f, inputs, 0.0, 1e-4), ValueError);
}

TEST(FiniteDiff, NonDeterministicFnDetected) {
  std::vector<Tensor> inputs = {Tensor::row({1.0})};
  int calls = 0;
  auto f = [&calls](Graph& g, const std::vector<Var>& v) {
    return add_scalar(sum_all(v[0]), static_cast<double>(calls++));
  };
  EXPECT_THROW(finite_diff_check(f, inputs, 1e-5, 1e-4), ValueError);
}

// --- per-op gradient property ---------------------------------------------------

namespace {

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  ScalarFn fn;
};

Var squash(Var x) { return mean_all(hadamard(x, add_scalar(x, 0.5))); }

}  // namespace

TEST(GradProperty, EveryOpPassesFiniteDiffOnMultipleShapes) {
  Rng rng(101);
  std::vector<OpCase> cases;
  for (Shape s : {Shape{1, 4}, Shape{3, 2}, Shape{2, 5}}) {
    const std::size_t m = s[0], n = s[1];
    cases.push_back({"matmul", {s, {n, 3}},
                     [](Graph&, const std::vector<Var>& v) { return squash(matmul(v[0], v[1])); }});
    cases.push_back({"transpose", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(transpose(v[0])); }});
    cases.push_back({"add", {s, s},
                     [](Graph&, const std::vector<Var>& v) { return squash(add(v[0], v[1])); }});
    cases.push_back({"add_bias", {s, {n}},
                     [](Graph&, const std::vector<Var>& v) { return squash(add(v[0], v[1])); }});
    cases.push_back({"sub", {s, s},
                     [](Graph&, const std::vector<Var>& v) { return squash(sub(v[0], v[1])); }});
    cases.push_back({"hadamard", {s, s},
                     [](Graph&, const std::vector<Var>& v) { return squash(hadamard(v[0], v[1])); }});
    cases.push_back({"scale", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(scale(v[0], -1.7)); }});
    cases.push_back({"add_scalar", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(add_scalar(v[0], 0.3)); }});
    cases.push_back({"sigmoid", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(sigmoid(v[0])); }});
    cases.push_back({"tanh", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(tanh(v[0])); }});
    cases.push_back({"relu", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(relu(v[0])); }});
    cases.push_back({"abs", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(abs(v[0])); }});
    cases.push_back({"softmax_rows", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(softmax_rows(v[0])); }});
    cases.push_back({"layer_norm", {s, {n}, {n}},
                     [](Graph&, const std::vector<Var>& v) {
                       return squash(layer_norm(v[0], v[1], v[2], 1e-5));
                     }});
    cases.push_back({"concat_cols", {s, {m, 2}},
                     [](Graph&, const std::vector<Var>& v) { return squash(concat_cols(v[0], v[1])); }});
    cases.push_back({"concat_rows", {s, {2, n}},
                     [](Graph&, const std::vector<Var>& v) { return squash(concat_rows(v[0], v[1])); }});
    cases.push_back({"slice_rows", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(slice_rows(v[0], 0, 1)); }});
    cases.push_back({"reshape", {s},
                     [m, n](Graph&, const std::vector<Var>& v) {
                       return squash(reshape(v[0], Shape{n, m}));
                     }});
    cases.push_back({"sum_all", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(sum_all(v[0])); }});
    cases.push_back({"mean_all", {s},
                     [](Graph&, const std::vector<Var>& v) { return squash(mean_all(v[0])); }});
  }
  for (auto& c : cases) {
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(rand_tensor(rng, s, -1.5, 1.5));
    // Keep relu/abs inputs away from their kink at 0.
    for (auto& t : inputs)
      for (auto& v : t.data())
        if (std::fabs(v) < 1e-3) v = v < 0 ? v - 0.1 : v + 0.1;
    auto r = finite_diff_check(c.fn, inputs, 1e-5, 1e-4);
    EXPECT_TRUE(r.pass) << c.name << " shape0=" << shape_to_string(c.shapes[0])
                        << " max_rel_err=" << r.max_rel_err;
  }
}
