#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tsattr {

/// Code index reserved for padding and for masked code slots.
inline constexpr int kPadCode = 0;

struct Visit {
  std::vector<int> codes;
  std::vector<double> labs;
  double delta_t = 0.0;  // hours since the previous visit

  friend bool operator==(const Visit&, const Visit&) = default;
};

/// One patient's visit sequence. `planted_label` and `ground_truth_mask` are
/// generator-only fields; user-supplied extracts leave them empty.
struct PatientRecord {
  std::uint64_t id = 0;
  std::vector<Visit> visits;
  int label = 0;
  int planted_label = -1;
  std::vector<bool> ground_truth_mask;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

using Dataset = std::vector<PatientRecord>;

enum class FeatureKind : std::uint8_t { kCode, kLab };

/// Address of one maskable unit: a code slot or a lab index within a visit.
struct FeaturePosition {
  int visit = 0;
  FeatureKind kind = FeatureKind::kCode;
  int slot = 0;

  friend bool operator==(const FeaturePosition&, const FeaturePosition&) = default;
};

/// A trailing visit with no labs and only PAD codes.
bool is_padding_visit(const Visit& visit);

/// Number of visits up to and including the last non-padding visit.
std::size_t effective_length(const PatientRecord& record);

/// Flattened feature grid: for every non-padding visit, its code slots in
/// order followed by its lab indices. Time intervals are not maskable.
std::vector<FeaturePosition> feature_positions(const PatientRecord& record);
std::size_t feature_count(const PatientRecord& record);

/// Appends padding visits until the record has `visits` visits.
PatientRecord pad_record(const PatientRecord& record, std::size_t visits);

/// Per-lab mean over a dataset, used as the training-mean mask replacement.
std::vector<double> lab_means(std::span<const PatientRecord> records, std::size_t n_labs);

}  // namespace tsattr
