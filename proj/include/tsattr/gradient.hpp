#pragma once

// White-box attributors. Each explains `target_score` (target logit minus the
// mean logit) over the rows of the input-contribution matrix; a position's
// score is the sum over its row.

#include <set>
#include <string>

#include "tsattr/attribution.hpp"
#include "tsattr/autodiff.hpp"
#include "tsattr/masking.hpp"
#include "tsattr/model.hpp"

namespace tsattr {

struct IntegratedGradientsOptions {
  int steps = 50;
};

/// Midpoint Riemann approximation of the path integral from the fully masked
/// record to the input. meta["completeness_residual"] holds
/// |sum(scores) - (F(x) - F(baseline))|.
AttributionMap integrated_gradients(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                                    int target_class, const IntegratedGradientsOptions& options = {});

/// Reference activations for DeepLIFT, recorded from one forward pass over `reference`.
ad::ReferenceActivations record_reference_pass(const Model& model, const PatientRecord& reference);

/// DeepLIFT rescale with the fully masked record as reference.
/// meta["summation_residual"] holds |sum(scores) - (F(x) - F(reference))|.
AttributionMap deeplift(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                        int target_class);
/// Same with a precomputed reference pass; throws when its tape structure does not match.
AttributionMap deeplift(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                        int target_class, const ad::ReferenceActivations& reference);

struct GimOptions {
  double temperature = 2.0;
  /// Gates whose gradient is cut (see kUpdateGateTag, kResetGateTag).
  std::set<std::string> gate_tags;
  bool freeze_norm_stats = true;
};

/// Gradient interaction modifications: softmax Jacobian at temperature T,
/// frozen layer-norm statistics, optional gate pass-through; the modified
/// gradient is multiplied by (input - baseline).
AttributionMap gim(const Model& model, const PatientRecord& record, const MaskPolicy& policy, int target_class,
                   const GimOptions& options = {});

/// Plain gradient times (input - baseline).
AttributionMap gradient_x_input(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                                int target_class);

/// Sums each row of (gradient * delta) into one score per feature position.
std::vector<double> row_scores(const Tensor& gradient, const Tensor& delta);

}  // namespace tsattr
