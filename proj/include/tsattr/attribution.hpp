#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tsattr {

/// Per-position importance scores aligned to `feature_positions(record)`.
struct AttributionMap {
  std::vector<double> scores;
  int target_class = 0;
  std::string method;
  std::map<std::string, double> meta;

  void validate(std::size_t feature_count) const;
};

/// One attribution line of the benchmark JSONL output.
struct AttributionLine {
  std::uint64_t record_id = 0;
  AttributionMap map;
  double runtime_seconds = 0.0;
};

std::string to_jsonl_line(const AttributionLine& line);
AttributionLine attribution_from_jsonl_line(std::string_view text, std::size_t line_number = 0);

}  // namespace tsattr
