#include "tsattr/record.hpp"

#include <algorithm>

namespace tsattr {

bool is_padding_visit(const Visit& visit) {
  return visit.labs.empty() && std::all_of(visit.codes.begin(), visit.codes.end(), [](int c) { return c == kPadCode; });
}

std::size_t effective_length(const PatientRecord& record) {
  std::size_t n = record.visits.size();
  while (n > 0 && is_padding_visit(record.visits[n - 1])) --n;
  return n;
}

std::vector<FeaturePosition> feature_positions(const PatientRecord& record) {
  std::vector<FeaturePosition> out;
  const std::size_t n = effective_length(record);
  for (std::size_t v = 0; v < n; ++v) {
    const Visit& visit = record.visits[v];
    for (std::size_t c = 0; c < visit.codes.size(); ++c) {
      out.push_back({static_cast<int>(v), FeatureKind::kCode, static_cast<int>(c)});
    }
    for (std::size_t l = 0; l < visit.labs.size(); ++l) {
      out.push_back({static_cast<int>(v), FeatureKind::kLab, static_cast<int>(l)});
    }
  }
  return out;
}

std::size_t feature_count(const PatientRecord& record) {
  std::size_t d = 0;
  const std::size_t n = effective_length(record);
  for (std::size_t v = 0; v < n; ++v) d += record.visits[v].codes.size() + record.visits[v].labs.size();
  return d;
}

PatientRecord pad_record(const PatientRecord& record, std::size_t visits) {
  PatientRecord out = record;
  while (out.visits.size() < visits) out.visits.push_back(Visit{{kPadCode}, {}, 0.0});
  return out;
}

std::vector<double> lab_means(std::span<const PatientRecord> records, std::size_t n_labs) {
  std::vector<double> sum(n_labs, 0.0);
  std::vector<std::size_t> count(n_labs, 0);
  for (const PatientRecord& r : records) {
    for (const Visit& v : r.visits) {
      for (std::size_t l = 0; l < std::min(n_labs, v.labs.size()); ++l) {
        sum[l] += v.labs[l];
        ++count[l];
      }
    }
  }
  for (std::size_t l = 0; l < n_labs; ++l) sum[l] = count[l] ? sum[l] / static_cast<double>(count[l]) : 0.0;
  return sum;
}

}  // namespace tsattr
