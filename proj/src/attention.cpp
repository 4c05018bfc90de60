#include "tsattr/attention.hpp"

#include "tsattr/error.hpp"

namespace tsattr {

AttributionMap chefer(const Model& model, const PatientRecord& record, int target_class) {
  if (!has_attention(model.config().architecture)) {
    throw NotApplicableError(std::string("chefer: architecture ") +
                             std::string(to_string(model.config().architecture)) + " has no attention layers");
  }
  AttributionMap map;
  map.method = "chefer";
  map.target_class = target_class;
  if (feature_count(record) == 0) return map;

  ForwardTrace trace = forward_traced(model, record);
  const ad::Var f = target_score(trace, target_class);
  const ad::Gradients grads = ad::backward(trace.tape, f);
  std::vector<std::vector<Tensor>> maps, map_grads;
  for (const auto& layer : trace.attention) {
    maps.emplace_back();
    map_grads.emplace_back();
    for (const ad::Var head : layer) {
      maps.back().push_back(trace.tape.value(head));
      map_grads.back().push_back(grads.of(trace.tape, head));
    }
  }
  const Tensor rollout = gradient_rollout(maps, map_grads);
  const Eigen::RowVectorXd visit_score = rollout.colwise().mean();

  const Tensor gx = grads.of(trace.tape, trace.input).cwiseProduct(trace.tape.value(trace.input)).cwiseAbs();
  const auto visits = static_cast<std::size_t>(visit_score.size());
  std::vector<double> visit_weight(visits, 0.0);
  std::vector<int> visit_features(visits, 0);
  std::vector<double> row_weight(trace.positions.size());
  for (std::size_t p = 0; p < trace.positions.size(); ++p) {
    const auto v = static_cast<std::size_t>(trace.positions[p].visit);
    row_weight[p] = gx.row(static_cast<Eigen::Index>(p)).sum();
    visit_weight[v] += row_weight[p];
    ++visit_features[v];
  }
  map.scores.resize(trace.positions.size());
  for (std::size_t p = 0; p < trace.positions.size(); ++p) {
    const auto v = static_cast<std::size_t>(trace.positions[p].visit);
    const double share = visit_weight[v] > 0.0 ? row_weight[p] / visit_weight[v] : 1.0 / visit_features[v];
    map.scores[p] = visit_score(static_cast<Eigen::Index>(v)) * share;
  }
  map.meta["forward_passes"] = 1;
  map.meta["backward_passes"] = 1;
  map.meta["attention_layers"] = static_cast<double>(trace.attention.size());
  return map;
}

}  // namespace tsattr
