#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsattr/record.hpp"

namespace tsattr {

enum class LabReplacement { kZero, kTrainingMean };

std::string_view to_string(LabReplacement r);
LabReplacement lab_replacement_from_string(std::string_view s);

/// Removal semantics shared by every attributor and metric: codes become
/// PAD, labs take the replacement value, time intervals are kept.
struct MaskPolicy {
  LabReplacement lab_replacement = LabReplacement::kTrainingMean;
  std::vector<double> lab_means;

  double lab_value(int lab) const;
};

/// Removes the given flattened feature positions. Throws on out-of-range positions.
PatientRecord mask(const PatientRecord& record, std::span<const std::size_t> positions, const MaskPolicy& policy);
/// Removes every position where `removed[i]` is true; `removed` spans the whole feature grid.
PatientRecord mask_where(const PatientRecord& record, const std::vector<bool>& removed, const MaskPolicy& policy);
/// All maskable positions removed: the reference record for counterfactual methods.
PatientRecord baseline_record(const PatientRecord& record, const MaskPolicy& policy);

}  // namespace tsattr
