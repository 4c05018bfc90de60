#include "tsattr/gradient.hpp"

#include <cmath>

#include "tsattr/error.hpp"

namespace tsattr {
namespace {

double score_value(const Model& model, const PatientRecord& record, const Tensor& contributions, int target_class) {
  ForwardTrace trace = forward_traced(model, record, contributions);
  const ad::Var f = target_score(trace, target_class);
  return trace.tape.value(f)(0, 0);
}

double total(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

AttributionMap empty_map(const char* method, int target_class) {
  AttributionMap map;
  map.method = method;
  map.target_class = target_class;
  return map;
}

AttributionMap single_pass(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                           int target_class, const ad::BackwardPolicy& backward_policy, const char* method) {
  AttributionMap map = empty_map(method, target_class);
  if (feature_count(record) == 0) return map;
  const Tensor c0 = input_contributions(model, baseline_record(record, policy));
  ForwardTrace trace = forward_traced(model, record);
  const ad::Var f = target_score(trace, target_class);
  const ad::Gradients grads = ad::backward(trace.tape, f, backward_policy);
  map.scores = row_scores(grads.of(trace.tape, trace.input), trace.tape.value(trace.input) - c0);
  map.meta["forward_passes"] = 1;
  map.meta["backward_passes"] = 1;
  return map;
}

}  // namespace

std::vector<double> row_scores(const Tensor& gradient, const Tensor& delta) {
  if (gradient.rows() != delta.rows() || gradient.cols() != delta.cols()) {
    throw ShapeError("row scores: gradient and delta shapes differ");
  }
  std::vector<double> out(static_cast<std::size_t>(gradient.rows()));
  for (Eigen::Index r = 0; r < gradient.rows(); ++r) {
    out[static_cast<std::size_t>(r)] = gradient.row(r).cwiseProduct(delta.row(r)).sum();
  }
  return out;
}

AttributionMap integrated_gradients(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                                    int target_class, const IntegratedGradientsOptions& options) {
  if (options.steps < 1) throw InvalidArgument("integrated gradients: steps must be >= 1");
  AttributionMap map = empty_map("integrated_gradients", target_class);
  if (feature_count(record) == 0) return map;
  const Tensor x = input_contributions(model, record);
  const Tensor x0 = input_contributions(model, baseline_record(record, policy));
  const Tensor delta = x - x0;
  Tensor grad_sum = Tensor::Zero(x.rows(), x.cols());
  for (int k = 0; k < options.steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(options.steps);
    const Tensor point = x0 + alpha * delta;
    ForwardTrace trace = forward_traced(model, record, point);
    const ad::Var f = target_score(trace, target_class);
    grad_sum += ad::backward(trace.tape, f).of(trace.tape, trace.input);
  }
  map.scores = row_scores(grad_sum / static_cast<double>(options.steps), delta);
  const double change = score_value(model, record, x, target_class) - score_value(model, record, x0, target_class);
  map.meta["steps"] = options.steps;
  map.meta["score_change"] = change;
  map.meta["completeness_residual"] = std::abs(total(map.scores) - change);
  map.meta["forward_passes"] = options.steps + 2;
  map.meta["backward_passes"] = options.steps;
  return map;
}

ad::ReferenceActivations record_reference_pass(const Model& model, const PatientRecord& reference) {
  return ad::ReferenceActivations::capture(forward_traced(model, reference).tape);
}

AttributionMap deeplift(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                        int target_class) {
  if (feature_count(record) == 0) return empty_map("deeplift", target_class);
  const PatientRecord reference = baseline_record(record, policy);
  ForwardTrace ref_trace = forward_traced(model, reference);
  const ad::Var f0 = target_score(ref_trace, target_class);
  const double ref_score = ref_trace.tape.value(f0)(0, 0);
  const ad::ReferenceActivations activations = ad::ReferenceActivations::capture(ref_trace.tape);
  AttributionMap map = deeplift(model, record, policy, target_class, activations);
  map.meta["summation_residual"] = std::abs(total(map.scores) - (map.meta["score"] - ref_score));
  map.meta["forward_passes"] = 2;
  return map;
}

AttributionMap deeplift(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                        int target_class, const ad::ReferenceActivations& reference) {
  AttributionMap map = empty_map("deeplift", target_class);
  if (feature_count(record) == 0) return map;
  const Tensor x0 = input_contributions(model, baseline_record(record, policy));
  ForwardTrace trace = forward_traced(model, record);
  const ad::Var f = target_score(trace, target_class);
  ad::BackwardPolicy bp;
  bp.mode = ad::BackwardMode::kDeepLiftRescale;
  bp.reference = &reference;
  const ad::Gradients mult = ad::backward(trace.tape, f, bp);
  map.scores = row_scores(mult.of(trace.tape, trace.input), trace.tape.value(trace.input) - x0);
  map.meta["score"] = trace.tape.value(f)(0, 0);
  map.meta["forward_passes"] = 1;
  map.meta["backward_passes"] = 1;
  return map;
}

AttributionMap gim(const Model& model, const PatientRecord& record, const MaskPolicy& policy, int target_class,
                   const GimOptions& options) {
  ad::BackwardPolicy bp;
  bp.mode = ad::BackwardMode::kGim;
  bp.gim_temperature = options.temperature;
  bp.gim_gate_tags = options.gate_tags;
  bp.gim_freeze_norm_stats = options.freeze_norm_stats;
  AttributionMap map = single_pass(model, record, policy, target_class, bp, "gim");
  map.meta["temperature"] = options.temperature;
  return map;
}

AttributionMap gradient_x_input(const Model& model, const PatientRecord& record, const MaskPolicy& policy,
                                int target_class) {
  return single_pass(model, record, policy, target_class, {}, "gradient_x_input");
}

}  // namespace tsattr
