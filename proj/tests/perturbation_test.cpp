#include <cmath>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tsattr/error.hpp"
#include "tsattr/perturbation.hpp"

namespace tsattr {
namespace {

using testing::max_abs_diff;

CoalitionValue linear_value(std::vector<double> w, std::vector<double> x, double bias = 0.0) {
  return [w = std::move(w), x = std::move(x), bias](const std::vector<bool>& z) {
    double s = bias;
    for (std::size_t i = 0; i < z.size(); ++i) s += z[i] ? w[i] * x[i] : 0.0;
    return s;
  };
}

// Smooth toy with pairwise and triple interactions.
double toy(const std::vector<bool>& z) {
  auto v = [&](std::size_t i) { return z[i] ? 1.0 : 0.0; };
  double s = 0.3 * v(0) - 0.7 * v(1) + 0.2 * v(2) + 0.9 * v(3) * v(4) - 0.4 * v(5) * v(6) * v(7);
  if (z.size() > 8) s += 0.6 * v(8) * v(0) + 0.25 * v(9);
  return std::tanh(s + 0.1 * v(2) * v(5));
}

TEST(KernelWeight, MatchesClosedForm) {
  EXPECT_DOUBLE_EQ(shapley_kernel_weight(4, 1), 0.25);
  EXPECT_DOUBLE_EQ(shapley_kernel_weight(4, 2), 0.125);
  for (int m = 2; m <= 30; ++m) {
    for (int s = 1; s < m; ++s) EXPECT_DOUBLE_EQ(shapley_kernel_weight(m, s), shapley_kernel_weight(m, m - s));
  }
}

TEST(KernelWeight, EndpointsSignalInfiniteWeight) {
  EXPECT_THROW(shapley_kernel_weight(4, 0), InfiniteKernelWeight);
  EXPECT_THROW(shapley_kernel_weight(4, 4), InfiniteKernelWeight);
  EXPECT_THROW(shapley_kernel_weight(4, 5), InvalidArgument);
  EXPECT_THROW(shapley_kernel_weight(4, -1), InvalidArgument);
}

TEST(KernelShap, ExactModeEqualsBruteForce) {
  for (int m : {2, 3, 5, 8, 10}) {
    const CoalitionValue f = [m](const std::vector<bool>& z) {
      std::vector<bool> padded(10, false);
      for (int i = 0; i < m; ++i) padded[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)];
      return toy(padded);
    };
    const ShapleyEstimate e = kernel_shap(f, m, {0, 0, ShapMode::kExact, 0});
    EXPECT_LT(max_abs_diff(e.phi, e.brute_force), 1e-6) << "M=" << m;
    EXPECT_LT(max_abs_diff(e.phi, shapley_brute_force(f, m)), 1e-6);
    EXPECT_EQ(e.coalitions, (std::size_t{1} << m) - 2);
  }
}

TEST(KernelShap, LinearModelGetsWeightTimesInput) {
  const std::vector<double> w{0.5, -1.0, 2.0, 0.25, 3.0};
  const std::vector<double> x{1.0, 2.0, -0.5, 4.0, 0.1};
  const ShapleyEstimate e = kernel_shap(linear_value(w, x, 0.7), 5, {0, 0, ShapMode::kExact, 0});
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(e.phi[i], w[i] * x[i], 1e-12);
  EXPECT_NEAR(e.base_value, 0.7, 1e-15);
}

TEST(KernelShap, SymmetricAndGivesEqualShares) {
  const CoalitionValue f = [](const std::vector<bool>& z) { return z[0] && z[1] ? 1.0 : 0.0; };
  for (ShapMode mode : {ShapMode::kExact, ShapMode::kSampled}) {
    const ShapleyEstimate e = kernel_shap(f, 2, {4, 0, mode, 1});
    EXPECT_NEAR(e.phi[0], 0.5, 1e-12);
    EXPECT_NEAR(e.phi[1], 0.5, 1e-12);
  }
}

TEST(KernelShap, FullBudgetSamplingEqualsExact) {
  const ShapleyEstimate exact = kernel_shap(toy, 8, {0, 0, ShapMode::kExact, 0});
  const ShapleyEstimate sampled = kernel_shap(toy, 8, {254, 0, ShapMode::kSampled, 5});
  EXPECT_EQ(sampled.coalitions, 254U);
  EXPECT_LT(max_abs_diff(sampled.phi, exact.phi), 1e-6);
}

TEST(KernelShap, SampledModeHonorsLocalAccuracy) {
  const CoalitionValue f = [](const std::vector<bool>& z) {
    std::vector<bool> padded(10, false);
    for (std::size_t i = 0; i < 10; ++i) padded[i] = z[i] || z[i + 10];
    return toy(padded) + (z[19] ? 0.3 : 0.0);
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ShapleyEstimate e = kernel_shap(f, 20, {0, 254, ShapMode::kSampled, seed});
    EXPECT_EQ(e.coalitions, 254U);
    std::vector<bool> all(20, true);
    EXPECT_NEAR(e.base_value + testing::sum(e.phi), f(all), 1e-9);
  }
}

TEST(KernelShap, SampledModeIsDeterministicAndPaired) {
  const CoalitionValue f = [](const std::vector<bool>& z) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += z[i] ? std::sin(static_cast<double>(i) + 1.0) : 0.0;
    return std::tanh(s);
  };
  const ShapleyEstimate a = kernel_shap(f, 30, {100, 0, ShapMode::kSampled, 3});
  const ShapleyEstimate b = kernel_shap(f, 30, {100, 0, ShapMode::kSampled, 3});
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_LE(a.coalitions, 100U);
  EXPECT_EQ(a.coalitions % 2, 0U);
  EXPECT_EQ(default_coalition_count(30), 62);
  EXPECT_EQ(default_coalition_count(400), 512);
}

TEST(KernelShap, PreconditionsAreEnforced) {
  EXPECT_THROW(kernel_shap(toy, 16, {0, 0, ShapMode::kExact, 0}), InvalidArgument);
  EXPECT_THROW(kernel_shap(toy, 8, {9, 0, ShapMode::kSampled, 0}), InvalidArgument);
  // a coalition and its complement give opposite rows once the sum constraint is eliminated,
  // so paired sampling needs M - 1 distinct pairs
  EXPECT_THROW(kernel_shap(toy, 8, {10, 0, ShapMode::kSampled, 0}), SingularSystemError);
  EXPECT_NO_THROW(kernel_shap(toy, 8, {18, 0, ShapMode::kSampled, 0}));
}

TEST(KernelShap, ExactModeIsPermutationEquivariant) {
  const std::vector<std::size_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
  const ShapleyEstimate base = kernel_shap(toy, 8, {0, 0, ShapMode::kExact, 0});
  // g(z) evaluates toy on the un-permuted coalition, so feature perm[i] of g is feature i of toy
  const CoalitionValue g = [&](const std::vector<bool>& z) {
    std::vector<bool> orig(8);
    for (std::size_t i = 0; i < 8; ++i) orig[i] = z[perm[i]];
    return toy(orig);
  };
  const ShapleyEstimate moved = kernel_shap(g, 8, {0, 0, ShapMode::kExact, 0});
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(moved.phi[perm[i]], base.phi[i], 1e-10);
}

TEST(KernelShap, ModelLevelLocalAccuracyAndMissingness) {
  const MaskPolicy policy{LabReplacement::kTrainingMean, {0.5, -0.25, 1.0, 0.0, 0.75, -0.5}};
  for (Architecture a : testing::all_architectures()) {
    const Model m = testing::small_model(a);
    PatientRecord r = testing::small_record(11, 2);
    for (Visit& v : r.visits) v.codes.resize(1);
    r.visits[1].labs[0] = 0.5;  // already equals its replacement value
    const std::size_t d = feature_count(r);
    ASSERT_LE(d, 15U);
    const AttributionMap map = kernel_shap(m, r, policy, 1, {0, 0, ShapMode::kExact, 0});
    ASSERT_EQ(map.scores.size(), d);
    const double full = predict_proba(m, r)(1);
    EXPECT_NEAR(map.meta.at("base_value") + testing::sum(map.scores), full, 1e-6);
    const auto grid = feature_positions(r);
    for (std::size_t i = 0; i < d; ++i) {
      if (grid[i].visit == 1 && grid[i].kind == FeatureKind::kLab && grid[i].slot == 0) {
        EXPECT_LT(std::abs(map.scores[i]), 1e-8) << to_string(a);
      }
    }
  }
}

TEST(Lime, RecoversLinearCoefficients) {
  const std::vector<double> w{0.5, -1.0, 2.0, 0.25, 3.0, -0.75};
  const std::vector<double> x{1.0, 2.0, -0.5, 4.0, 0.1, 1.5};
  const LimeEstimate e = lime(linear_value(w, x, 0.2), 6, {4000, 0.0, 1e-9, 7});
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(e.coefficients[i], w[i] * x[i], 1e-6);
  EXPECT_NEAR(e.intercept, 0.2, 1e-6);
}

TEST(Lime, ConstantModelGetsZeroCoefficients) {
  const LimeEstimate e = lime([](const std::vector<bool>&) { return 0.42; }, 12, {200, 0.0, 1e-3, 1});
  for (double c : e.coefficients) EXPECT_LT(std::abs(c), 1e-8);
}

TEST(Lime, SameSeedSameMap) {
  const LimeEstimate a = lime(toy, 10, {200, 0.0, 1e-3, 9});
  const LimeEstimate b = lime(toy, 10, {200, 0.0, 1e-3, 9});
  EXPECT_EQ(a.coefficients, b.coefficients);
  const LimeEstimate c = lime(toy, 10, {200, 0.0, 1e-3, 10});
  EXPECT_NE(a.coefficients, c.coefficients);
}

TEST(Lime, PermutingAdditiveFeaturesPermutesCoefficients) {
  const std::vector<double> w{0.3, -0.2, 0.9, 0.05, -0.6};
  const std::vector<std::size_t> perm{2, 4, 1, 0, 3};
  std::vector<double> wp(5);
  for (std::size_t i = 0; i < 5; ++i) wp[perm[i]] = w[i];
  const LimeEstimate a = lime(linear_value(w, std::vector<double>(5, 1.0)), 5, {500, 0.0, 1e-9, 4});
  const LimeEstimate b = lime(linear_value(wp, std::vector<double>(5, 1.0)), 5, {500, 0.0, 1e-9, 4});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(b.coefficients[perm[i]], a.coefficients[i], 1e-6);
}

TEST(Lime, PreconditionsAreEnforced) {
  EXPECT_THROW(lime(toy, 8, {1, 0.0, 1e-3, 0}), InvalidArgument);
  EXPECT_THROW(lime(toy, 8, {10, 0.0, -1.0, 0}), InvalidArgument);
}

TEST(Lime, ModelLevelMapHasOneScorePerPosition) {
  const Model m = testing::small_model(Architecture::kStageAttn);
  const PatientRecord r = testing::small_record(3, 5);
  const MaskPolicy policy{LabReplacement::kZero, {}};
  const AttributionMap map = lime(m, r, policy, 0, {});
  EXPECT_EQ(map.scores.size(), feature_count(r));
  EXPECT_EQ(map.method, "lime");
  EXPECT_EQ(map.meta.at("forward_passes"), 200.0);
  EXPECT_NO_THROW(map.validate(feature_count(r)));
}

TEST(RandomBaseline, SeededUniformScores) {
  const PatientRecord r = testing::small_record(4, 8);
  const AttributionMap a = random_baseline(r, 1);
  EXPECT_EQ(a.scores, random_baseline(r, 1).scores);
  EXPECT_NE(a.scores, random_baseline(r, 2).scores);
  EXPECT_EQ(a.scores.size(), feature_count(r));
  for (double s : a.scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_EQ(a.method, "random");
}

}  // namespace
}  // namespace tsattr
