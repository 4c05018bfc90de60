#include "tsattr/perturbation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "tsattr/rng.hpp"

namespace tsattr {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double binomial(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

using Mask = std::vector<bool>;

struct Coalition {
  Mask present;
  double weight = 0.0;
};

// Solves the constrained weighted least squares after eliminating the last
// coefficient through sum(phi) = f(full) - f(empty).
ShapleyEstimate solve_constrained(const std::vector<Coalition>& coalitions, const std::vector<double>& values,
                                  double empty, double full, int m) {
  ShapleyEstimate out;
  out.base_value = empty;
  out.coalitions = coalitions.size();
  const double delta = full - empty;
  if (m == 1) {
    out.phi = {delta};
    return out;
  }
  const auto rows = static_cast<Eigen::Index>(coalitions.size());
  MatrixXd x(rows, m - 1);
  VectorXd t(rows);
  VectorXd sqrt_w(rows);
  for (Eigen::Index k = 0; k < rows; ++k) {
    const Mask& z = coalitions[static_cast<std::size_t>(k)].present;
    const double last = z[static_cast<std::size_t>(m - 1)] ? 1.0 : 0.0;
    for (int i = 0; i < m - 1; ++i) x(k, i) = (z[static_cast<std::size_t>(i)] ? 1.0 : 0.0) - last;
    t(k) = values[static_cast<std::size_t>(k)] - empty - last * delta;
    sqrt_w(k) = std::sqrt(coalitions[static_cast<std::size_t>(k)].weight);
  }
  const MatrixXd xw = sqrt_w.asDiagonal() * x;
  const VectorXd tw = sqrt_w.asDiagonal() * t;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < m - 1) {
    throw SingularSystemError("kernel-shap: regression rank " + std::to_string(qr.rank()) + " < " +
                              std::to_string(m - 1) + "; insufficient coalition diversity");
  }
  const VectorXd beta = qr.solve(tw);
  out.phi.resize(static_cast<std::size_t>(m));
  double acc = 0.0;
  for (int i = 0; i < m - 1; ++i) {
    out.phi[static_cast<std::size_t>(i)] = beta(i);
    acc += beta(i);
  }
  out.phi[static_cast<std::size_t>(m - 1)] = delta - acc;
  out.weighted_residual = (xw * beta - tw).norm();
  return out;
}

Mask complement(const Mask& z) {
  Mask c(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) c[i] = !z[i];
  return c;
}

// Appends every coalition of `size` present features.
void enumerate_size(int m, int size, double weight, std::vector<Coalition>& out) {
  std::vector<int> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    Mask z(static_cast<std::size_t>(m), false);
    for (int i : idx) z[static_cast<std::size_t>(i)] = true;
    out.push_back({std::move(z), weight});
    int pos = size - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == m - size + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (int j = pos + 1; j < size; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

std::vector<Coalition> exact_coalitions(int m) {
  std::vector<Coalition> out;
  for (int s = 1; s < m; ++s) enumerate_size(m, s, shapley_kernel_weight(m, s), out);
  return out;
}

// Complete size tiers in order of kernel weight while the budget covers them
// (each size s paired with M - s), then paired sampling of the remaining
// tiers with sizes drawn in proportion to their kernel mass.
std::vector<Coalition> sampled_coalitions(int m, int budget, std::uint64_t seed) {
  std::vector<Coalition> out;
  const int n_sizes = m / 2;  // sizes 1..floor(M/2) and their complements
  int next_size = 1;
  std::size_t remaining = static_cast<std::size_t>(budget);
  for (; next_size <= n_sizes; ++next_size) {
    const bool paired = next_size != m - next_size;
    const double tier = binomial(m, next_size) * (paired ? 2.0 : 1.0);
    if (tier > static_cast<double>(remaining)) break;
    const double w = shapley_kernel_weight(m, next_size);
    enumerate_size(m, next_size, w, out);
    if (paired) enumerate_size(m, m - next_size, w, out);
    remaining -= static_cast<std::size_t>(tier);
  }
  if (next_size > n_sizes || remaining < 2) return out;

  // kernel mass of each remaining tier (paired tiers counted twice)
  std::vector<int> sizes;
  std::vector<double> mass;
  double total_mass = 0.0;
  for (int s = next_size; s <= n_sizes; ++s) {
    const bool paired = s != m - s;
    const double w = static_cast<double>(m - 1) / (static_cast<double>(s) * static_cast<double>(m - s));
    sizes.push_back(s);
    mass.push_back(w * (paired ? 2.0 : 1.0));
    total_mass += mass.back();
  }
  Rng rng = make_rng(seed, 0x736861ULL);
  std::map<Mask, double> counts;
  std::vector<Mask> order;
  const std::size_t max_draws = 100 * static_cast<std::size_t>(budget) + 1000;
  std::vector<int> perm(static_cast<std::size_t>(m));
  for (std::size_t draw = 0; draw < max_draws && order.size() + 1 < remaining; ++draw) {
    double u = uniform01(rng) * total_mass;
    std::size_t tier = 0;
    while (tier + 1 < mass.size() && u >= mass[tier]) u -= mass[tier++];
    const int s = sizes[tier];
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < s; ++i) {
      const int j = i + static_cast<int>(uniform01(rng) * static_cast<double>(m - i));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    Mask z(static_cast<std::size_t>(m), false);
    for (int i = 0; i < s; ++i) z[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;
    for (const Mask& candidate : {z, complement(z)}) {
      auto [it, inserted] = counts.emplace(candidate, 0.0);
      it->second += 1.0;
      if (inserted) order.push_back(candidate);
    }
  }
  double count_total = 0.0;
  for (const auto& [mask, c] : counts) count_total += c;
  // sampled coalitions share the remaining kernel mass in proportion to their draw counts
  for (const Mask& z : order) out.push_back({z, total_mass * counts[z] / count_total});
  return out;
}

}  // namespace

double shapley_kernel_weight(int features, int coalition_size) {
  if (features < 1 || coalition_size < 0 || coalition_size > features) {
    throw InvalidArgument("shapley kernel: coalition size outside [0, M]");
  }
  if (coalition_size == 0 || coalition_size == features) {
    throw InfiniteKernelWeight("shapley kernel: infinite weight for coalition size " +
                               std::to_string(coalition_size) + " of " + std::to_string(features));
  }
  const double m = features, s = coalition_size;
  return (m - 1.0) / (binomial(features, coalition_size) * s * (m - s));
}

std::vector<double> shapley_brute_force(const CoalitionValue& value, int features) {
  if (features < 1 || features > 20) throw InvalidArgument("shapley brute force: M must lie in [1, 20]");
  const std::size_t n = std::size_t{1} << features;
  std::vector<double> f(n);
  for (std::size_t bits = 0; bits < n; ++bits) {
    Mask z(static_cast<std::size_t>(features));
    for (int i = 0; i < features; ++i) z[static_cast<std::size_t>(i)] = (bits >> i) & 1U;
    f[bits] = value(z);
  }
  std::vector<double> factorial(static_cast<std::size_t>(features) + 1, 1.0);
  for (int i = 1; i <= features; ++i) factorial[static_cast<std::size_t>(i)] = factorial[static_cast<std::size_t>(i - 1)] * i;
  std::vector<double> phi(static_cast<std::size_t>(features), 0.0);
  for (int i = 0; i < features; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t s = 0; s < n; ++s) {
      if (s & bit) continue;
      const int size = std::popcount(s);
      const double w = factorial[static_cast<std::size_t>(size)] *
                       factorial[static_cast<std::size_t>(features - size - 1)] /
                       factorial[static_cast<std::size_t>(features)];
      phi[static_cast<std::size_t>(i)] += w * (f[s | bit] - f[s]);
    }
  }
  return phi;
}

int default_coalition_count(int features) { return std::min(2 * (features + 1), 512); }

ShapleyEstimate kernel_shap(const CoalitionValue& value, int features, const KernelShapOptions& options) {
  const int m = features;
  if (m < 1) throw InvalidArgument("kernel-shap: need at least one feature");
  const double empty = value(Mask(static_cast<std::size_t>(m), false));
  const double full = value(Mask(static_cast<std::size_t>(m), true));
  std::vector<Coalition> coalitions;
  if (options.mode == ShapMode::kExact) {
    if (m > 15) throw InvalidArgument("kernel-shap: exact mode requires M <= 15, got " + std::to_string(m));
    if (m > 1) coalitions = exact_coalitions(m);
  } else {
    const int requested = options.n_coalitions > 0
                              ? options.n_coalitions
                              : std::max(default_coalition_count(m), options.min_coalitions);
    if (requested < m + 2) {
      throw InvalidArgument("kernel-shap: sampled mode needs n-coalitions >= M + 2 (" + std::to_string(m + 2) + ")");
    }
    if (m > 1) {
      const double all = m < 60 ? std::ldexp(1.0, m) - 2.0 : 1e18;
      const int budget = static_cast<int>(std::min<double>(requested, all));
      coalitions = sampled_coalitions(m, budget, options.seed);
    }
  }
  std::vector<double> values;
  values.reserve(coalitions.size());
  for (const Coalition& c : coalitions) values.push_back(value(c.present));
  ShapleyEstimate out = solve_constrained(coalitions, values, empty, full, m);
  if (options.mode == ShapMode::kExact) out.brute_force = shapley_brute_force(value, m);
  return out;
}

LimeEstimate lime(const CoalitionValue& value, int features, const LimeOptions& options) {
  const int m = features;
  if (m < 1) throw InvalidArgument("lime: need at least one feature");
  if (options.n_samples < 2) throw InvalidArgument("lime: n-samples must be >= 2");
  if (!(options.ridge_lambda >= 0.0)) throw InvalidArgument("lime: ridge lambda must be non-negative");
  const double width = options.kernel_width > 0.0 ? options.kernel_width : 0.75 * std::sqrt(static_cast<double>(m));
  const int n = options.n_samples;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Rng rng = make_rng(options.seed + static_cast<std::uint64_t>(attempt), 0x6c696d65ULL);
    std::vector<Mask> samples(static_cast<std::size_t>(n), Mask(static_cast<std::size_t>(m)));
    for (Mask& z : samples) {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = uniform01(rng) < 0.5;
    }
    const bool degenerate = std::all_of(samples.begin(), samples.end(), [&](const Mask& z) { return z == samples[0]; });
    if (degenerate) continue;
    MatrixXd a(n, m + 1);
    VectorXd y(n), w(n);
    for (int k = 0; k < n; ++k) {
      const Mask& z = samples[static_cast<std::size_t>(k)];
      a(k, 0) = 1.0;
      int removed = 0;
      for (int i = 0; i < m; ++i) {
        a(k, i + 1) = z[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        removed += z[static_cast<std::size_t>(i)] ? 0 : 1;
      }
      // squared Euclidean distance between a binary mask and the full coalition is the removed count
      w(k) = std::exp(-static_cast<double>(removed) / (width * width));
      y(k) = value(z);
    }
    MatrixXd normal = a.transpose() * w.asDiagonal() * a;
    for (int i = 1; i <= m; ++i) normal(i, i) += options.ridge_lambda;
    const VectorXd rhs = a.transpose() * (w.asDiagonal() * y);
    Eigen::LDLT<MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success) throw SingularSystemError("lime: ridge system could not be factored");
    const VectorXd theta = ldlt.solve(rhs);
    LimeEstimate out;
    out.intercept = theta(0);
    out.coefficients.assign(theta.data() + 1, theta.data() + theta.size());
    out.retries = attempt;
    return out;
  }
  throw SingularSystemError("lime: all perturbation samples identical after 3 retries");
}

CoalitionValue probability_value(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                                 int target_class) {
  return [&model, &record, &policy, target_class](const Mask& present) {
    Mask removed(present.size());
    for (std::size_t i = 0; i < present.size(); ++i) removed[i] = !present[i];
    return predict_proba(model, mask_where(record, removed, policy))(target_class);
  };
}

AttributionMap kernel_shap(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                           int target_class, const KernelShapOptions& options) {
  const int m = static_cast<int>(feature_count(record));
  AttributionMap map;
  map.method = "kernel_shap";
  map.target_class = target_class;
  if (m == 0) return map;
  ShapleyEstimate est = kernel_shap(probability_value(model, record, policy, target_class), m, options);
  map.scores = std::move(est.phi);
  map.meta["coalitions"] = static_cast<double>(est.coalitions);
  map.meta["regression_residual"] = est.weighted_residual;
  map.meta["base_value"] = est.base_value;
  map.meta["forward_passes"] = static_cast<double>(est.coalitions + 2);
  return map;
}

AttributionMap lime(const Model& model, const PatientRecord& record, const MaskPolicy& policy, int target_class,
                    const LimeOptions& options) {
  const int m = static_cast<int>(feature_count(record));
  AttributionMap map;
  map.method = "lime";
  map.target_class = target_class;
  if (m == 0) return map;
  LimeEstimate est = lime(probability_value(model, record, policy, target_class), m, options);
  map.scores = std::move(est.coefficients);
  map.meta["intercept"] = est.intercept;
  map.meta["retries"] = est.retries;
  map.meta["forward_passes"] = options.n_samples;
  return map;
}

AttributionMap random_baseline(const PatientRecord& record, std::uint64_t seed) {
  Rng rng = make_rng(seed, record.id);
  AttributionMap map;
  map.method = "random";
  map.scores.resize(feature_count(record));
  for (double& s : map.scores) s = uniform01(rng);
  return map;
}

}  // namespace tsattr
