#include "tsattr/metrics.hpp"

#include "tsattr/error.hpp"

namespace tsattr {
namespace {

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw InvalidArgument("metrics: prediction and label counts differ");
}

}  // namespace

double f1_for_class(std::span<const int> predicted, std::span<const int> labels, int c) {
  check_sizes(predicted.size(), labels.size());
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predicted[i] == c, l = labels[i] == c;
    tp += p && l;
    fp += p && !l;
    fn += !p && l;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

EvalMetrics binary_metrics(std::span<const double> positive_scores, std::span<const int> predicted,
                           std::span<const int> labels) {
  check_sizes(positive_scores.size(), labels.size());
  check_sizes(predicted.size(), labels.size());
  EvalMetrics m;
  m.roc_auc = roc_auc<double>(positive_scores, labels);
  m.pr_auc = pr_auc<double>(positive_scores, labels);
  m.accuracy = accuracy(predicted, labels);
  m.f1 = f1_for_class(predicted, labels, 1);
  return m;
}

EvalMetrics multiclass_metrics(std::span<const int> predicted, std::span<const int> labels, int n_classes) {
  check_sizes(predicted.size(), labels.size());
  EvalMetrics m;
  m.accuracy = accuracy(predicted, labels);
  double macro = 0, weighted = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double f = f1_for_class(predicted, labels, c);
    const auto support = static_cast<double>(std::count(labels.begin(), labels.end(), c));
    macro += f;
    weighted += f * support;
  }
  m.f1_macro = macro / n_classes;
  m.f1_weighted = labels.empty() ? 0.0 : weighted / static_cast<double>(labels.size());
  // every sample gets exactly one prediction, so micro-F1 equals accuracy
  m.f1_micro = m.accuracy;
  return m;
}

}  // namespace tsattr
