#pragma once

// Black-box attributors over binary feature coalitions.

#include <cstdint>
#include <functional>
#include <vector>

#include "tsattr/attribution.hpp"
#include "tsattr/error.hpp"
#include "tsattr/masking.hpp"
#include "tsattr/model.hpp"

namespace tsattr {

/// Value of a coalition; `present[i]` is true when feature i is kept.
using CoalitionValue = std::function<double(const std::vector<bool>& present)>;

/// Raised for coalition sizes 0 and M, whose kernel weight is unbounded.
/// The solver enforces those two coalitions as equality constraints instead.
class InfiniteKernelWeight : public Error {
 public:
  using Error::Error;
};

/// Shapley kernel (M - 1) / (C(M, s) * s * (M - s)) for 0 < s < M.
double shapley_kernel_weight(int features, int coalition_size);

/// Exact Shapley values by enumerating every subset (M <= 20).
std::vector<double> shapley_brute_force(const CoalitionValue& value, int features);

enum class ShapMode { kSampled, kExact };

struct KernelShapOptions {
  /// 0 selects 2 * (M + 1) capped at 512.
  int n_coalitions = 0;
  /// Lower bound applied to the automatic count.
  int min_coalitions = 0;
  ShapMode mode = ShapMode::kSampled;
  std::uint64_t seed = 0;
};

struct ShapleyEstimate {
  double base_value = 0.0;  // f(all features removed)
  std::vector<double> phi;
  std::size_t coalitions = 0;
  double weighted_residual = 0.0;
  /// Exact mode only: values from the direct subset-sum formula.
  std::vector<double> brute_force;
};

int default_coalition_count(int features);

/// Kernel SHAP: kernel-weighted least squares constrained to
/// phi_0 = f(empty) and phi_0 + sum(phi) = f(full).
ShapleyEstimate kernel_shap(const CoalitionValue& value, int features, const KernelShapOptions& options);

struct LimeOptions {
  int n_samples = 200;
  /// 0 selects 0.75 * sqrt(M).
  double kernel_width = 0.0;
  double ridge_lambda = 1e-3;
  std::uint64_t seed = 0;
};

struct LimeEstimate {
  double intercept = 0.0;
  std::vector<double> coefficients;
  int retries = 0;
};

/// LIME: random keep/remove masks (p = 0.5), exponential kernel on the
/// Euclidean distance to the full coalition, weighted ridge regression.
LimeEstimate lime(const CoalitionValue& value, int features, const LimeOptions& options);

// ---- model-level attributors ----------------------------------------------

/// f(coalition) = softmax probability of `target_class` with absent features masked.
CoalitionValue probability_value(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                                 int target_class);

AttributionMap kernel_shap(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                           int target_class, const KernelShapOptions& options);
AttributionMap lime(const Model& model, const PatientRecord& record, const MaskPolicy& policy, int target_class,
                    const LimeOptions& options);
/// I.i.d. uniform [0, 1) scores seeded by (seed, record id).
AttributionMap random_baseline(const PatientRecord& record, std::uint64_t seed);

}  // namespace tsattr
