#include "tsattr/faithfulness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "tsattr/error.hpp"

namespace tsattr {

ProbabilityFn model_probabilities(const Model& model) {
  return [&model](const PatientRecord& r) { return predict_proba(model, r); };
}

std::vector<double> default_k_grid() { return {0.01, 0.05, 0.10, 0.20, 0.50}; }

std::size_t top_count(double k, std::size_t d) {
  if (!(k > 0.0) || k > 1.0) throw InvalidArgument("k-grid entries must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(k * static_cast<double>(d) - 1e-9));
  return std::min(d, std::max<std::size_t>(1, n));
}

std::vector<std::size_t> rank_positions(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

enum class Keep { kRemoveTop, kKeepTop };

double mean_drop(const ProbabilityFn& predict, const PatientRecord& record, const AttributionMap& attribution,
                 std::span<const double> k_grid, const MaskPolicy& policy, Keep keep, int c, double p_full) {
  const std::size_t d = feature_count(record);
  const std::vector<std::size_t> order = rank_positions(attribution.scores);
  double acc = 0.0;
  for (double k : k_grid) {
    const std::size_t n = top_count(k, d);
    std::vector<bool> removed(d, keep == Keep::kKeepTop);
    for (std::size_t i = 0; i < n; ++i) removed[order[i]] = keep == Keep::kRemoveTop;
    acc += p_full - predict(mask_where(record, removed, policy))(c);
  }
  return acc / static_cast<double>(k_grid.size());
}

void check_inputs(const PatientRecord& record, const AttributionMap& attribution, std::span<const double> k_grid) {
  attribution.validate(feature_count(record));
  if (k_grid.empty()) throw InvalidArgument("faithfulness: empty k-grid");
  if (feature_count(record) == 0) throw InvalidArgument("faithfulness: record has no maskable positions");
}

}  // namespace

FaithfulnessScores faithfulness(const ProbabilityFn& predict, const PatientRecord& record,
                                const AttributionMap& attribution, std::span<const double> k_grid,
                                const MaskPolicy& policy) {
  check_inputs(record, attribution, k_grid);
  const Eigen::VectorXd p = predict(record);
  Eigen::Index c = 0;
  p.maxCoeff(&c);
  FaithfulnessScores out;
  out.predicted_class = static_cast<int>(c);
  out.comprehensiveness =
      mean_drop(predict, record, attribution, k_grid, policy, Keep::kRemoveTop, out.predicted_class, p(c));
  out.sufficiency = mean_drop(predict, record, attribution, k_grid, policy, Keep::kKeepTop, out.predicted_class, p(c));
  return out;
}

double comprehensiveness(const ProbabilityFn& predict, const PatientRecord& record,
                         const AttributionMap& attribution, std::span<const double> k_grid, const MaskPolicy& policy) {
  return faithfulness(predict, record, attribution, k_grid, policy).comprehensiveness;
}

double sufficiency(const ProbabilityFn& predict, const PatientRecord& record, const AttributionMap& attribution,
                   std::span<const double> k_grid, const MaskPolicy& policy) {
  return faithfulness(predict, record, attribution, k_grid, policy).sufficiency;
}

FaithfulnessReport make_report(std::string method, std::string model, std::string task,
                               std::span<const FaithfulnessScores> scores, std::span<const double> k_grid,
                               double runtime_per_record) {
  if (scores.empty()) throw InvalidArgument("faithfulness report: no records for " + method);
  FaithfulnessReport r;
  r.method = std::move(method);
  r.model = std::move(model);
  r.task = std::move(task);
  for (const FaithfulnessScores& s : scores) {
    r.comprehensiveness += s.comprehensiveness;
    r.sufficiency += s.sufficiency;
  }
  r.comprehensiveness /= static_cast<double>(scores.size());
  r.sufficiency /= static_cast<double>(scores.size());
  r.composite = composite_score(r.comprehensiveness, r.sufficiency);
  r.runtime_per_record = runtime_per_record;
  r.n_records = scores.size();
  r.k_grid.assign(k_grid.begin(), k_grid.end());
  return r;
}

const std::vector<std::string>& method_order() {
  static const std::vector<std::string> order = {"chefer", "deeplift", "gim", "integrated_gradients",
                                                 "lime",   "kernel_shap", "random"};
  return order;
}

std::string method_display_name(const std::string& method) {
  static const std::map<std::string, std::string> names = {
      {"chefer", "Chefer"}, {"deeplift", "DeepLift"}, {"gim", "GIM"}, {"integrated_gradients", "IG"},
      {"lime", "LIME"},     {"kernel_shap", "SHAP"},  {"random", "Baseline"}};
  const auto it = names.find(method);
  return it == names.end() ? method : it->second;
}

bool method_applies(const std::string& method, const std::string& model) {
  if (method != "chefer") return true;
  return has_attention(architecture_from_string(model));
}

WinMatrix win_matrix(std::span<const FaithfulnessReport> reports) {
  if (reports.empty()) throw InvalidArgument("win matrix: no reports");
  std::vector<std::string> methods;
  for (const std::string& m : method_order()) {
    if (std::any_of(reports.begin(), reports.end(), [&](const auto& r) { return r.method == m; })) methods.push_back(m);
  }
  for (const FaithfulnessReport& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  std::set<std::pair<std::string, std::string>> pairs;
  std::map<std::tuple<std::string, std::string, std::string>, double> composite;
  for (const FaithfulnessReport& r : reports) {
    pairs.emplace(r.model, r.task);
    if (!composite.emplace(std::tuple{r.method, r.model, r.task}, r.composite).second) {
      throw InvalidArgument("win matrix: duplicate report for (" + r.method + ", " + r.model + ", " + r.task + ")");
    }
  }
  std::vector<std::string> missing;
  for (const std::string& m : methods) {
    for (const auto& [model, task] : pairs) {
      if (method_applies(m, model) && !composite.count({m, model, task})) {
        missing.push_back("(" + m + ", " + model + ", " + task + ")");
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "win matrix: missing grid cells";
    for (const std::string& t : missing) msg += " " + t;
    throw InvalidArgument(msg);
  }
  const std::size_t n = methods.size();
  WinMatrix w;
  w.methods = methods;
  w.wins.assign(n, std::vector<int>(n, 0));
  w.ties.assign(n, std::vector<int>(n, 0));
  w.denominators.assign(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      for (const auto& [model, task] : pairs) {
        if (!method_applies(methods[i], model) || !method_applies(methods[j], model)) continue;
        const double a = composite.at({methods[i], model, task});
        const double b = composite.at({methods[j], model, task});
        ++w.denominators[i][j];
        if (a > b) ++w.wins[i][j];
        if (a == b) ++w.ties[i][j];
      }
    }
  }
  return w;
}

std::string WinMatrix::to_csv(std::string_view config_hash) const {
  std::ostringstream out;
  out << "row_method,column_method,wins,ties,denominator,config_hash\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = 0; j < methods.size(); ++j) {
      if (i == j) continue;
      out << methods[i] << ',' << methods[j] << ',' << wins[i][j] << ',' << ties[i][j] << ',' << denominators[i][j]
          << ',' << config_hash << '\n';
    }
  }
  return out.str();
}

std::string WinMatrix::to_markdown() const {
  std::ostringstream out;
  out << "| Method |";
  for (const std::string& m : methods) out << ' ' << method_display_name(m) << " |";
  out << "\n|---|";
  for (std::size_t j = 0; j < methods.size(); ++j) out << "---|";
  out << '\n';
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out << "| " << method_display_name(methods[i]) << " |";
    for (std::size_t j = 0; j < methods.size(); ++j) {
      if (i == j) {
        out << " - |";
      } else {
        out << ' ' << wins[i][j] << '/' << denominators[i][j] << " |";
      }
    }
    out << '\n';
  }
  return out.str();
}

RuntimeProfile runtime_profile(std::string method, std::string model, std::string task,
                               const std::function<void(const PatientRecord&)>& attribute,
                               std::span<const PatientRecord> records) {
  if (records.empty()) throw InvalidArgument("runtime profile: no records");
  const auto start = std::chrono::steady_clock::now();
  for (const PatientRecord& r : records) attribute(r);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return {std::move(method), std::move(model), std::move(task), elapsed.count() / static_cast<double>(records.size()),
          records.size()};
}

double sign_test_p_value(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  const double log_half = std::log(0.5) * static_cast<double>(n);
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    const double log_choose = std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
                              std::lgamma(static_cast<double>(n - k) + 1.0);
    p += std::exp(log_choose + log_half);
  }
  return std::min(1.0, p);
}

}  // namespace tsattr
