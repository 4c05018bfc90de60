#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "tsattr/attribution.hpp"
#include "tsattr/masking.hpp"
#include "tsattr/model.hpp"

namespace tsattr {

/// Class probabilities for a record; lets the metrics run on any classifier.
using ProbabilityFn = std::function<Eigen::VectorXd(const PatientRecord&)>;

ProbabilityFn model_probabilities(const Model& model);

std::vector<double> default_k_grid();

/// max(1, ceil(k * d)), capped at d.
std::size_t top_count(double k, std::size_t d);

/// Positions sorted by descending score; equal scores keep position order.
std::vector<std::size_t> rank_positions(std::span<const double> scores);

struct FaithfulnessScores {
  double comprehensiveness = 0.0;
  double sufficiency = 0.0;
  int predicted_class = 0;
};

/// Both metrics for one record, sharing the unmasked prediction.
FaithfulnessScores faithfulness(const ProbabilityFn& predict, const PatientRecord& record,
                                const AttributionMap& attribution, std::span<const double> k_grid,
                                const MaskPolicy& policy);

double comprehensiveness(const ProbabilityFn& predict, const PatientRecord& record,
                         const AttributionMap& attribution, std::span<const double> k_grid, const MaskPolicy& policy);
double sufficiency(const ProbabilityFn& predict, const PatientRecord& record, const AttributionMap& attribution,
                   std::span<const double> k_grid, const MaskPolicy& policy);

inline double composite_score(double comprehensiveness, double sufficiency) {
  return comprehensiveness * (1.0 - sufficiency);
}

struct FaithfulnessReport {
  std::string method;
  std::string model;
  std::string task;
  double comprehensiveness = 0.0;
  double sufficiency = 0.0;
  double composite = 0.0;
  double runtime_per_record = 0.0;
  std::size_t n_records = 0;
  std::vector<double> k_grid;
};

/// Averages per-record scores; composite is computed from the averages.
FaithfulnessReport make_report(std::string method, std::string model, std::string task,
                               std::span<const FaithfulnessScores> scores, std::span<const double> k_grid,
                               double runtime_per_record);

// ---- head-to-head comparison ------------------------------------------------

/// Benchmark method identifiers in display order.
const std::vector<std::string>& method_order();
std::string method_display_name(const std::string& method);
/// Chefer needs attention maps; every other method applies to every model.
bool method_applies(const std::string& method, const std::string& model);

struct WinMatrix {
  std::vector<std::string> methods;
  /// wins[i][j]: model-task pairs where methods[i] has the strictly higher composite.
  std::vector<std::vector<int>> wins;
  std::vector<std::vector<int>> ties;
  /// Pairs where both methods apply.
  std::vector<std::vector<int>> denominators;

  std::string to_csv(std::string_view config_hash) const;
  std::string to_markdown() const;
};

/// Methods are ordered by `method_order()`, unknown names last in first-seen
/// order. Throws listing every missing (method, model, task) triple.
WinMatrix win_matrix(std::span<const FaithfulnessReport> reports);

// ---- runtime ------------------------------------------------------------------

struct RuntimeProfile {
  std::string method;
  std::string model;
  std::string task;
  double seconds_per_record = 0.0;
  std::size_t n_records = 0;

  double extrapolate_hours(double population) const { return seconds_per_record * population / 3600.0; }
};

/// Wall-clock of `attribute` over `records`, averaged per record.
RuntimeProfile runtime_profile(std::string method, std::string model, std::string task,
                               const std::function<void(const PatientRecord&)>& attribute,
                               std::span<const PatientRecord> records);

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test_p_value(std::size_t wins, std::size_t losses);

}  // namespace tsattr
