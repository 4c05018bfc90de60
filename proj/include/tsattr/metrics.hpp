#pragma once

// Classification metrics computed by threshold sweeps over scores.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace tsattr {

namespace detail {

template <typename Scalar>
std::vector<std::size_t> order_by_score_desc(std::span<const Scalar> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace detail

/// Area under the ROC curve; tied scores form one threshold step. Absent
/// when only one class is present.
template <typename Scalar>
std::optional<Scalar> roc_auc(std::span<const Scalar> scores, std::span<const int> labels) {
  const auto pos = static_cast<Scalar>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<Scalar>(labels.size()) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const auto idx = detail::order_by_score_desc(scores);
  Scalar area = 0, tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    Scalar dtp = 0, dfp = 0;
    std::size_t j = i;
    for (; j < idx.size() && scores[idx[j]] == scores[idx[i]]; ++j) (labels[idx[j]] == 1 ? dtp : dfp) += 1;
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (pos * neg);
}

/// Average precision: sum over thresholds of recall increase times precision.
template <typename Scalar>
std::optional<Scalar> pr_auc(std::span<const Scalar> scores, std::span<const int> labels) {
  const auto pos = static_cast<Scalar>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0 || pos == static_cast<Scalar>(labels.size())) return std::nullopt;
  const auto idx = detail::order_by_score_desc(scores);
  Scalar ap = 0, tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    Scalar dtp = 0;
    std::size_t j = i;
    for (; j < idx.size() && scores[idx[j]] == scores[idx[i]]; ++j) dtp += labels[idx[j]] == 1 ? 1 : 0;
    seen += static_cast<Scalar>(j - i);
    tp += dtp;
    ap += (dtp / pos) * (tp / seen);
    i = j;
  }
  return ap;
}

struct EvalMetrics {
  // binary tasks
  std::optional<double> pr_auc;
  std::optional<double> roc_auc;
  double accuracy = 0.0;
  std::optional<double> f1;
  // multiclass tasks
  std::optional<double> f1_weighted;
  std::optional<double> f1_macro;
  std::optional<double> f1_micro;

  friend bool operator==(const EvalMetrics&, const EvalMetrics&) = default;
};

/// F1 of class `c` treating it as the positive class; 0 when undefined.
double f1_for_class(std::span<const int> predicted, std::span<const int> labels, int c);

/// `positive_scores` are predicted probabilities of class 1.
EvalMetrics binary_metrics(std::span<const double> positive_scores, std::span<const int> predicted,
                           std::span<const int> labels);
EvalMetrics multiclass_metrics(std::span<const int> predicted, std::span<const int> labels, int n_classes);

}  // namespace tsattr
