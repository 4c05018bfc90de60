#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsattr/faithfulness.hpp"
#include "tsattr/metrics.hpp"

namespace tsattr {

/// Fixed-precision decimal used by every CSV so reruns are byte-identical.
std::string format_number(double value);
std::string csv_field(std::string_view text);
std::string xml_escape(std::string_view text);

struct MetricsRow {
  std::string task;
  std::string model;
  EvalMetrics metrics;
};

inline constexpr std::string_view kMetricsHeader = "task,model,PR-AUC,ROC-AUC,Acc.,F1,F1-W,F1-Ma,F1-Mi,config_hash";

/// Classification metrics; cells that do not apply to a task are empty.
std::string metrics_csv(std::span<const MetricsRow> rows, std::string_view config_hash);

std::string faithfulness_csv(std::span<const FaithfulnessReport> reports, std::string_view config_hash);

struct RecordFaithfulness {
  std::string task;
  std::string model;
  std::string method;
  std::uint64_t record_id = 0;
  FaithfulnessScores scores;
};

std::string record_faithfulness_csv(std::span<const RecordFaithfulness> rows, std::string_view config_hash);
std::string runtime_csv(std::span<const RuntimeProfile> profiles, double population, std::string_view config_hash);

struct ScatterPoint {
  std::string series;  // legend entry and colour
  std::string label;   // text next to the marker
  double x = 0.0;
  double y = 0.0;
};

struct ScatterSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::string config_hash;
  bool log_x = false;
};

/// Standalone SVG document.
std::string scatter_svg(const ScatterSpec& spec, std::span<const ScatterPoint> points);

}  // namespace tsattr
