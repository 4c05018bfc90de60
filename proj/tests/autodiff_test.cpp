#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tsattr/autodiff.hpp"
#include "tsattr/error.hpp"

namespace tsattr::ad {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;

// Builds a scalar output from one input leaf on the given tape.
using Network = std::function<Var(Tape&, Var)>;

double evaluate(const Network& net, const Tensor& x) {
  Tape tape;
  return tape.value(net(tape, tape.leaf(x)))(0, 0);
}

Tensor analytic(const Network& net, const Tensor& x, const BackwardPolicy& policy = {}) {
  Tape tape;
  const Var in = tape.leaf(x);
  const Var out = net(tape, in);
  return backward(tape, out, policy).of(tape, in);
}

Tensor random_tensor(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return t;
}

struct OpCase {
  const char* name;
  Network net;
  Eigen::Index rows, cols;
};

std::vector<OpCase> op_cases() {
  Rng rng = make_rng(5);
  const Tensor w = random_tensor(rng, 3, 4);
  const Tensor bias = random_tensor(rng, 1, 4);
  const Tensor other = random_tensor(rng, 2, 3);
  const Tensor gamma = random_tensor(rng, 1, 3) + Tensor::Ones(1, 3);
  const Tensor beta = random_tensor(rng, 1, 3);
  const Tensor weights = random_tensor(rng, 2, 3);
  // Weighted sum keeps per-entry sensitivities distinct.
  auto reduce = [weights](Tape& t, Var v) {
    const Tensor& val = t.value(v);
    Tensor wt = Tensor::Ones(val.rows(), val.cols());
    for (Eigen::Index i = 0; i < wt.size(); ++i) wt.data()[i] = 0.5 + 0.37 * static_cast<double>(i % 5);
    return sum(t, mul(t, v, t.constant(wt)));
  };
  return {
      {"matmul", [=](Tape& t, Var x) { return reduce(t, matmul(t, x, t.constant(w))); }, 2, 3},
      {"add-broadcast", [=](Tape& t, Var x) { return reduce(t, add(t, matmul(t, x, t.constant(w)), t.constant(bias))); }, 2, 3},
      {"sub", [=](Tape& t, Var x) { return reduce(t, sub(t, x, t.constant(other))); }, 2, 3},
      {"mul-self", [=](Tape& t, Var x) { return reduce(t, mul(t, x, x)); }, 2, 3},
      {"scale", [=](Tape& t, Var x) { return reduce(t, scale(t, x, -1.7)); }, 2, 3},
      {"transpose", [=](Tape& t, Var x) { return reduce(t, matmul(t, transpose(t, x), t.constant(other))); }, 2, 3},
      {"relu", [=](Tape& t, Var x) { return reduce(t, relu(t, x)); }, 2, 3},
      {"sigmoid", [=](Tape& t, Var x) { return reduce(t, sigmoid(t, x)); }, 2, 3},
      {"tanh", [=](Tape& t, Var x) { return reduce(t, tanh(t, x)); }, 2, 3},
      {"exp", [=](Tape& t, Var x) { return reduce(t, exp(t, x)); }, 2, 3},
      {"softmax", [=](Tape& t, Var x) { return reduce(t, softmax(t, x)); }, 2, 3},
      {"layer-norm",
       [=](Tape& t, Var x) { return reduce(t, layer_norm(t, x, t.constant(gamma), t.constant(beta))); }, 2, 3},
      {"concat-rows",
       [=](Tape& t, Var x) {
         const std::vector<Var> parts = {x, t.constant(other)};
         return reduce(t, slice(t, concat(t, parts, 0), 1, 2, 0, 3));
       },
       2, 3},
      {"concat-cols",
       [=](Tape& t, Var x) {
         const std::vector<Var> parts = {x, x};
         return reduce(t, slice(t, concat(t, parts, 1), 0, 2, 2, 3));
       },
       2, 3},
      {"mean", [=](Tape& t, Var x) { return reduce(t, mean(t, x)); }, 2, 3},
      {"embedding", [=](Tape& t, Var x) {
         const std::vector<int> rows = {2, 0, 2};
         return reduce(t, slice(t, embedding_lookup(t, x, rows), 0, 2, 0, 3));
       }, 3, 3},
  };
}

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  Rng rng = make_rng(11);
  for (const OpCase& c : op_cases()) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor(rng, c.rows, c.cols, 1.5);
      const Tensor fd = numeric_gradient([&](const Tensor& v) { return evaluate(c.net, v); }, x);
      EXPECT_LT(max_relative_error(analytic(c.net, x), fd), 1e-5) << c.name;
    }
  }
}

TEST(Autodiff, BroadcastAddAccumulatesBiasGradient) {
  Tape tape;
  const Var x = tape.leaf(Tensor::Ones(3, 2));
  const Var b = tape.leaf(Tensor::Zero(1, 2));
  const Var out = sum(tape, add(tape, x, b));
  const Gradients g = backward(tape, out);
  EXPECT_DOUBLE_EQ(g.at(b)(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g.at(b)(0, 1), 3.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape tape;
  const Var c = tape.constant(Tensor::Ones(1, 1));
  const Var x = tape.leaf(Tensor::Constant(1, 1, 2.0));
  const Var out = mul(tape, c, x);
  const Gradients g = backward(tape, out);
  EXPECT_FALSE(g.has(c));
  EXPECT_DOUBLE_EQ(g.at(x)(0, 0), 1.0);
  EXPECT_EQ(g.of(tape, c).size(), 1);
  EXPECT_DOUBLE_EQ(g.of(tape, c)(0, 0), 0.0);
}

TEST(Autodiff, RejectsNonScalarOutputAndBadSeeds) {
  Tape tape;
  const Var x = tape.leaf(Tensor::Ones(2, 2));
  const Var y = scale(tape, x, 2.0);
  EXPECT_THROW(backward(tape, y), ShapeError);
  EXPECT_THROW(backward_seeded(tape, y, Tensor::Ones(1, 2)), ShapeError);
  EXPECT_NO_THROW(backward_seeded(tape, y, Tensor::Ones(2, 2)));
}

TEST(Autodiff, ShapeMismatchIsReported) {
  Tape tape;
  const Var a = tape.leaf(Tensor::Ones(2, 3));
  const Var b = tape.leaf(Tensor::Ones(2, 3));
  EXPECT_THROW(matmul(tape, a, b), ShapeError);
  EXPECT_THROW(slice(tape, a, 1, 2, 0, 3), ShapeError);
}

TEST(Autodiff, NonFiniteValuesAreRejected) {
  Tape tape;
  const Var x = tape.leaf(Tensor::Constant(1, 1, 800.0));
  EXPECT_THROW(exp(tape, x), NumericError);
  Tensor bad = Tensor::Zero(1, 1);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(tape.leaf(bad), NumericError);
}

TEST(Autodiff, SoftmaxRowsAreStableForLargeInputs) {
  Tensor x(1, 3);
  x << 1000.0, 1001.0, 1002.0;
  const Tensor p = softmax_rows(x);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_GT(p(0, 2), p(0, 1));
}

// ---- deeplift-rescale ---------------------------------------------------------

struct Pair {
  Tensor x, x0;
};

double summation_gap(const Network& net, const Pair& p) {
  Tape ref_tape;
  const Var ref_out = net(ref_tape, ref_tape.leaf(p.x0));
  const double f0 = ref_tape.value(ref_out)(0, 0);
  const ReferenceActivations ref = ReferenceActivations::capture(ref_tape);
  Tape tape;
  const Var in = tape.leaf(p.x);
  const Var out = net(tape, in);
  BackwardPolicy policy;
  policy.mode = BackwardMode::kDeepLiftRescale;
  policy.reference = &ref;
  const Tensor m = backward(tape, out, policy).of(tape, in);
  return std::abs(m.cwiseProduct(p.x - p.x0).sum() - (tape.value(out)(0, 0) - f0));
}

TEST(DeepLift, EveryOpSumsToDelta) {
  Rng rng = make_rng(23);
  for (const OpCase& c : op_cases()) {
    for (int trial = 0; trial < 5; ++trial) {
      const Pair p{random_tensor(rng, c.rows, c.cols, 1.5), random_tensor(rng, c.rows, c.cols, 1.5)};
      EXPECT_LT(summation_gap(c.net, p), 1e-9) << c.name;
    }
  }
}

TEST(DeepLift, DeepNetworkSumsToDelta) {
  Rng rng = make_rng(29);
  const Tensor w1 = random_tensor(rng, 4, 4), w2 = random_tensor(rng, 4, 4), g = Tensor::Ones(1, 4),
               b = Tensor::Zero(1, 4);
  const Network net = [&](Tape& t, Var x) {
    const Var q = matmul(t, x, t.constant(w1));
    const Var k = matmul(t, x, t.constant(w2));
    const Var a = softmax(t, matmul(t, q, transpose(t, k)));
    Var h = layer_norm(t, add(t, x, matmul(t, a, x)), t.constant(g), t.constant(b));
    h = mul(t, sigmoid(t, h), tanh(t, relu(t, h)));
    return sum(t, mean(t, h));
  };
  for (int trial = 0; trial < 20; ++trial) {
    const Pair p{random_tensor(rng, 3, 4), random_tensor(rng, 3, 4)};
    EXPECT_LT(summation_gap(net, p), 1e-8);
  }
}

TEST(DeepLift, SoftmaxSumsToDeltaForLargeLogits) {
  Rng rng = make_rng(37);
  const Tensor w = random_tensor(rng, 8, 1);
  const Network net = [&](Tape& t, Var x) { return sum(t, matmul(t, softmax(t, x), t.constant(w))); };
  for (double spread : {20.0, 80.0, 400.0}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Pair p{random_tensor(rng, 3, 8, spread), random_tensor(rng, 3, 8, spread)};
      EXPECT_LT(summation_gap(net, p), 1e-12) << spread;
    }
  }
}

TEST(DeepLift, LinearNetworkEqualsGradient) {
  Rng rng = make_rng(31);
  const Tensor w = random_tensor(rng, 3, 1);
  const Network net = [&](Tape& t, Var x) { return sum(t, matmul(t, x, t.constant(w))); };
  const Tensor x = random_tensor(rng, 2, 3), x0 = random_tensor(rng, 2, 3);
  Tape ref_tape;
  net(ref_tape, ref_tape.leaf(x0));
  const ReferenceActivations ref = ReferenceActivations::capture(ref_tape);
  BackwardPolicy policy;
  policy.mode = BackwardMode::kDeepLiftRescale;
  policy.reference = &ref;
  EXPECT_LT(max_relative_error(analytic(net, x, policy), analytic(net, x)), 1e-12);
}

TEST(DeepLift, ReluKinkDiffersFromGradient) {
  const Network net = [](Tape& t, Var x) { return sum(t, relu(t, x)); };
  Tensor x(1, 1), x0(1, 1);
  x << 1.0;
  x0 << -1.0;
  Tape ref_tape;
  net(ref_tape, ref_tape.leaf(x0));
  const ReferenceActivations ref = ReferenceActivations::capture(ref_tape);
  BackwardPolicy policy;
  policy.mode = BackwardMode::kDeepLiftRescale;
  policy.reference = &ref;
  EXPECT_NEAR(analytic(net, x, policy)(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(analytic(net, x)(0, 0), 1.0, 1e-12);
}

TEST(DeepLift, NearZeroDeltaFallsBackToGradient) {
  const Network net = [](Tape& t, Var x) { return sum(t, sigmoid(t, x)); };
  Tensor x(1, 1);
  x << 0.3;
  Tape ref_tape;
  net(ref_tape, ref_tape.leaf(x));
  const ReferenceActivations ref = ReferenceActivations::capture(ref_tape);
  BackwardPolicy policy;
  policy.mode = BackwardMode::kDeepLiftRescale;
  policy.reference = &ref;
  const double s = 1.0 / (1.0 + std::exp(-0.3));
  EXPECT_NEAR(analytic(net, x, policy)(0, 0), s * (1.0 - s), 1e-12);
}

TEST(DeepLift, RequiresMatchingReference) {
  const Network small = [](Tape& t, Var x) { return sum(t, tanh(t, x)); };
  const Network other = [](Tape& t, Var x) { return sum(t, sigmoid(t, x)); };
  Tape ref_tape;
  small(ref_tape, ref_tape.leaf(Tensor::Zero(1, 2)));
  const ReferenceActivations ref = ReferenceActivations::capture(ref_tape);
  BackwardPolicy policy;
  policy.mode = BackwardMode::kDeepLiftRescale;
  EXPECT_THROW(analytic(small, Tensor::Ones(1, 2), policy), InvalidArgument);
  policy.reference = &ref;
  EXPECT_THROW(analytic(other, Tensor::Ones(1, 2), policy), InvalidArgument);
  EXPECT_THROW(analytic(small, Tensor::Ones(1, 3), policy), InvalidArgument);
  EXPECT_NO_THROW(analytic(small, Tensor::Ones(1, 2), policy));
}

// ---- gim ------------------------------------------------------------------------

BackwardPolicy gim_policy(double temperature, bool freeze) {
  BackwardPolicy p;
  p.mode = BackwardMode::kGim;
  p.gim_temperature = temperature;
  p.gim_freeze_norm_stats = freeze;
  return p;
}

TEST(Gim, TemperatureOneWithoutFreezingEqualsStandard) {
  Rng rng = make_rng(37);
  for (const OpCase& c : op_cases()) {
    const Tensor x = random_tensor(rng, c.rows, c.cols);
    EXPECT_EQ(analytic(c.net, x, gim_policy(1.0, false)), analytic(c.net, x)) << c.name;
  }
}

TEST(Gim, SoftmaxJacobianUsesTemperature) {
  Rng rng = make_rng(41);
  const Network net = [](Tape& t, Var x) {
    Tensor w(1, 3);
    w << 1.0, -2.0, 0.5;
    return sum(t, mul(t, softmax(t, x), t.constant(w)));
  };
  const Tensor x = random_tensor(rng, 1, 3, 2.0);
  // Expected: Jacobian of softmax(x / T) applied to the upstream gradient.
  Tensor w(1, 3);
  w << 1.0, -2.0, 0.5;
  const Tensor s = softmax_rows(Tensor(x / 2.0));
  const double dot = s.cwiseProduct(w).sum();
  const Tensor expected = s.cwiseProduct(w - Tensor::Constant(1, 3, dot));
  EXPECT_LT(max_relative_error(analytic(net, x, gim_policy(2.0, true)), expected), 1e-12);
  EXPECT_GT((analytic(net, x, gim_policy(2.0, true)) - analytic(net, x)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gim, FrozenNormStatisticsActAsAffineMap) {
  Rng rng = make_rng(43);
  const Tensor gamma = Tensor::Ones(1, 4), beta = Tensor::Zero(1, 4);
  Tensor w(1, 4);
  w << 0.3, -1.0, 2.0, 0.1;
  const Network net = [&](Tape& t, Var x) {
    return sum(t, mul(t, layer_norm(t, x, t.constant(gamma), t.constant(beta)), t.constant(w)));
  };
  const Tensor x = random_tensor(rng, 1, 4);
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const Tensor expected = w / std::sqrt(var + kLayerNormEpsilon);
  EXPECT_LT(max_relative_error(analytic(net, x, gim_policy(2.0, true)), expected), 1e-12);
  EXPECT_GT((analytic(net, x, gim_policy(2.0, false)) - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Gim, FlaggedGatePassesSignalOnlyThroughValueOperand) {
  const Network net = [](Tape& t, Var x) {
    const Var gate = sigmoid(t, slice(t, x, 0, 1, 0, 1));
    const Var value = slice(t, x, 0, 1, 1, 1);
    const GateFlag flag{"g", 0};
    return sum(t, mul(t, gate, value, &flag));
  };
  Tensor x(1, 2);
  x << 0.4, 1.5;
  BackwardPolicy flagged = gim_policy(2.0, true);
  flagged.gim_gate_tags = {"g"};
  const Tensor g = analytic(net, x, flagged);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_NEAR(g(0, 1), 1.0 / (1.0 + std::exp(-0.4)), 1e-12);
  const Tensor unflagged = analytic(net, x, gim_policy(2.0, true));
  EXPECT_NE(unflagged(0, 0), 0.0);
}

TEST(Gim, RejectsNonPositiveTemperature) {
  const Network net = [](Tape& t, Var x) { return sum(t, x); };
  EXPECT_THROW(analytic(net, Tensor::Ones(1, 1), gim_policy(0.0, true)), InvalidArgument);
}

}  // namespace
}  // namespace tsattr::ad
