#include "tsattr/masking.hpp"

#include "tsattr/error.hpp"

namespace tsattr {

std::string_view to_string(LabReplacement r) { return r == LabReplacement::kZero ? "zero" : "training-mean"; }

LabReplacement lab_replacement_from_string(std::string_view s) {
  if (s == "zero") return LabReplacement::kZero;
  if (s == "training-mean") return LabReplacement::kTrainingMean;
  throw InvalidArgument("unknown lab replacement '" + std::string(s) + "'");
}

double MaskPolicy::lab_value(int lab) const {
  if (lab_replacement == LabReplacement::kZero) return 0.0;
  if (lab < 0 || static_cast<std::size_t>(lab) >= lab_means.size()) {
    throw InvalidArgument("mask policy has no training mean for lab " + std::to_string(lab));
  }
  return lab_means[static_cast<std::size_t>(lab)];
}

namespace {

void remove_position(PatientRecord& out, const FeaturePosition& p, const MaskPolicy& policy) {
  Visit& visit = out.visits[static_cast<std::size_t>(p.visit)];
  if (p.kind == FeatureKind::kCode) {
    visit.codes[static_cast<std::size_t>(p.slot)] = kPadCode;
  } else {
    visit.labs[static_cast<std::size_t>(p.slot)] = policy.lab_value(p.slot);
  }
}

}  // namespace

PatientRecord mask(const PatientRecord& record, std::span<const std::size_t> positions, const MaskPolicy& policy) {
  const auto grid = feature_positions(record);
  PatientRecord out = record;
  for (std::size_t i : positions) {
    if (i >= grid.size()) {
      throw InvalidArgument("mask: position " + std::to_string(i) + " outside feature grid of " +
                            std::to_string(grid.size()));
    }
    remove_position(out, grid[i], policy);
  }
  return out;
}

PatientRecord mask_where(const PatientRecord& record, const std::vector<bool>& removed, const MaskPolicy& policy) {
  const auto grid = feature_positions(record);
  if (removed.size() != grid.size()) {
    throw InvalidArgument("mask: removal vector of " + std::to_string(removed.size()) + " for grid of " +
                          std::to_string(grid.size()));
  }
  PatientRecord out = record;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (removed[i]) remove_position(out, grid[i], policy);
  }
  return out;
}

PatientRecord baseline_record(const PatientRecord& record, const MaskPolicy& policy) {
  return mask_where(record, std::vector<bool>(feature_count(record), true), policy);
}

}  // namespace tsattr
