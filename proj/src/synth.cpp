#include "tsattr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsattr/error.hpp"
#include "tsattr/rng.hpp"

namespace tsattr {
namespace {

using nlohmann::json;

int uniform_int(Rng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

double normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int sample_class(Rng& rng, const std::vector<double>& prior) {
  double u = uniform01(rng);
  for (std::size_t c = 0; c + 1 < prior.size(); ++c) {
    if (u < prior[c]) return static_cast<int>(c);
    u -= prior[c];
  }
  return static_cast<int>(prior.size() - 1);
}

int first_background_code(const TaskSpec& task) {
  int hi = 0;
  for (const auto& group : task.driver_codes) {
    for (int c : group) hi = std::max(hi, c);
  }
  return hi + 1;
}

int driver_group(const TaskSpec& task, int code) {
  for (std::size_t g = 0; g < task.driver_codes.size(); ++g) {
    if (std::find(task.driver_codes[g].begin(), task.driver_codes[g].end(), code) != task.driver_codes[g].end()) {
      return static_cast<int>(g);
    }
  }
  return -1;
}

std::size_t window_start(const TaskSpec& task, std::size_t length) {
  return length > static_cast<std::size_t>(task.window) ? length - static_cast<std::size_t>(task.window) : 0;
}

void insert_code(Rng& rng, Visit& visit, int code) {
  const int at = uniform_int(rng, 0, static_cast<int>(visit.codes.size()));
  visit.codes.insert(visit.codes.begin() + at, code);
}

double crossing_value(Rng& rng, const TaskSpec& task) {
  return task.lab_threshold + 0.25 + 0.5 * std::abs(normal(rng));
}

}  // namespace

void TaskSpec::validate() const {
  if (n_classes < 2) throw InvalidArgument("task " + name + ": n_classes must be >= 2");
  if (!(positive_rate > 0.0 && positive_rate <= 0.5)) {
    throw InvalidArgument("task " + name + ": positive_rate must lie in (0, 0.5]");
  }
  if (positive_rate * (n_classes - 1) >= 1.0) throw InvalidArgument("task " + name + ": class prior exceeds 1");
  if (static_cast<int>(driver_codes.size()) != n_classes - 1) {
    throw InvalidArgument("task " + name + ": need one driver group per positive class");
  }
  for (const auto& g : driver_codes) {
    if (g.empty()) throw InvalidArgument("task " + name + ": driver codes must be nonempty");
    for (int c : g) {
      if (c <= kPadCode || c >= vocab_size) throw InvalidArgument("task " + name + ": driver code out of vocabulary");
    }
  }
  if (first_background_code(*this) >= vocab_size) throw InvalidArgument("task " + name + ": no background codes left");
  if (lab_index < 0 || lab_index >= n_labs) throw InvalidArgument("task " + name + ": lab index out of range");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) throw InvalidArgument("task " + name + ": label noise outside [0,1)");
  if (window < 1) throw InvalidArgument("task " + name + ": window must be positive");
  if (min_visits < 1 || max_visits < min_visits) throw InvalidArgument("task " + name + ": invalid visit range");
  if (max_background_codes < 1) throw InvalidArgument("task " + name + ": need at least one background code");
}

std::vector<double> TaskSpec::class_prior() const {
  std::vector<double> prior(static_cast<std::size_t>(n_classes), positive_rate);
  prior[0] = 1.0 - positive_rate * (n_classes - 1);
  return prior;
}

TaskSpec task_spec(TaskKind kind) {
  TaskSpec t;
  t.kind = kind;
  switch (kind) {
    case TaskKind::kMortality:
      t.name = "mortality-like";
      t.n_classes = 2;
      t.positive_rate = 0.3;
      t.driver_codes = {{1, 2, 3}};
      t.lab_index = 0;
      break;
    case TaskKind::kDka:
      t.name = "dka-like";
      t.n_classes = 2;
      t.positive_rate = 0.05;
      t.driver_codes = {{4, 5, 6}};
      t.lab_index = 1;
      break;
    case TaskKind::kLos:
      t.name = "los-like";
      t.n_classes = 5;
      t.positive_rate = 0.15;
      t.driver_codes = {{7, 8}, {9, 10}, {11, 12}, {13, 14}};
      t.lab_index = 2;
      break;
  }
  return t;
}

TaskSpec task_spec(std::string_view name) {
  if (name == "mortality-like") return task_spec(TaskKind::kMortality);
  if (name == "dka-like") return task_spec(TaskKind::kDka);
  if (name == "los-like") return task_spec(TaskKind::kLos);
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

std::vector<std::string> task_names() { return {"mortality-like", "dka-like", "los-like"}; }

int planted_class(const TaskSpec& task, const PatientRecord& record) {
  const std::size_t length = effective_length(record);
  const std::size_t start = window_start(task, length);
  bool crossing = false;
  int group = -1;
  for (std::size_t v = start; v < length; ++v) {
    const Visit& visit = record.visits[v];
    if (static_cast<std::size_t>(task.lab_index) < visit.labs.size() &&
        visit.labs[static_cast<std::size_t>(task.lab_index)] > task.lab_threshold) {
      crossing = true;
    }
    for (int code : visit.codes) {
      const int g = driver_group(task, code);
      if (g >= 0) group = g;  // latest occurrence wins
    }
  }
  return crossing && group >= 0 ? group + 1 : 0;
}

std::vector<double> bayes_posterior(const TaskSpec& task, const PatientRecord& record) {
  std::vector<double> post = task.class_prior();
  for (double& p : post) p *= task.label_noise;
  post[static_cast<std::size_t>(planted_class(task, record))] += 1.0 - task.label_noise;
  return post;
}

PatientRecord generate_record(const TaskSpec& task, std::uint64_t seed, std::uint64_t id) {
  Rng rng = make_rng(seed, id);
  const std::vector<double> prior = task.class_prior();
  const int planted = sample_class(rng, prior);
  const int background = first_background_code(task);
  const double lab_threshold = task.lab_threshold;
  const auto lab = static_cast<std::size_t>(task.lab_index);

  PatientRecord rec;
  rec.id = id;
  const int length = uniform_int(rng, task.min_visits, task.max_visits);
  rec.visits.resize(static_cast<std::size_t>(length));
  for (int v = 0; v < length; ++v) {
    Visit& visit = rec.visits[static_cast<std::size_t>(v)];
    visit.delta_t = v == 0 ? 0.0 : -task.mean_delta_t_hours * std::log(1.0 - uniform01(rng));
    const int n_codes = uniform_int(rng, 1, task.max_background_codes);
    for (int c = 0; c < n_codes; ++c) visit.codes.push_back(uniform_int(rng, background, task.vocab_size - 1));
    visit.labs.resize(static_cast<std::size_t>(task.n_labs));
    for (double& x : visit.labs) x = normal(rng);
  }

  const auto start = window_start(task, static_cast<std::size_t>(length));
  const auto in_window = [&] { return static_cast<std::size_t>(uniform_int(rng, static_cast<int>(start), length - 1)); };
  for (std::size_t v = start; v < static_cast<std::size_t>(length); ++v) {
    double& x = rec.visits[v].labs[lab];
    while (x > lab_threshold) x = normal(rng);
  }
  const int n_groups = static_cast<int>(task.driver_codes.size());
  const auto random_driver = [&](int group) {
    const auto& codes = task.driver_codes[static_cast<std::size_t>(group)];
    return codes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(codes.size()) - 1))];
  };

  if (start > 0 && uniform01(rng) < 0.3) {
    // evidence that falls outside the window
    const auto early = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(start) - 1));
    insert_code(rng, rec.visits[early], random_driver(uniform_int(rng, 0, n_groups - 1)));
    rec.visits[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(start) - 1))].labs[lab] =
        crossing_value(rng, task);
  }
  if (planted > 0) {
    insert_code(rng, rec.visits[in_window()], random_driver(planted - 1));
    rec.visits[in_window()].labs[lab] = crossing_value(rng, task);
  } else {
    const double u = uniform01(rng);
    if (u < 0.3) {
      insert_code(rng, rec.visits[in_window()], random_driver(uniform_int(rng, 0, n_groups - 1)));
    } else if (u < 0.6) {
      rec.visits[in_window()].labs[lab] = crossing_value(rng, task);
    }
  }

  rec.planted_label = planted_class(task, rec);
  if (rec.planted_label != planted) throw Error("generator produced a record violating its planted class");

  const auto positions = feature_positions(rec);
  rec.ground_truth_mask.assign(positions.size(), false);
  if (planted > 0) {
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const FeaturePosition& p = positions[i];
      if (static_cast<std::size_t>(p.visit) < start) continue;
      const Visit& visit = rec.visits[static_cast<std::size_t>(p.visit)];
      if (p.kind == FeatureKind::kCode) {
        rec.ground_truth_mask[i] = driver_group(task, visit.codes[static_cast<std::size_t>(p.slot)]) == planted - 1;
      } else {
        rec.ground_truth_mask[i] =
            p.slot == task.lab_index && visit.labs[static_cast<std::size_t>(p.slot)] > lab_threshold;
      }
    }
  }

  rec.label = uniform01(rng) < task.label_noise ? sample_class(rng, prior) : planted;
  return rec;
}

Dataset generate(const TaskSpec& task, std::size_t n, std::uint64_t seed, std::uint64_t first_id) {
  task.validate();
  if (n == 0) throw InvalidArgument("generate: n-samples must be positive");
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_record(task, seed, first_id + i));
  return out;
}

// ---- JSONL ---------------------------------------------------------------

std::string to_jsonl_line(const PatientRecord& record) {
  json visits = json::array();
  for (const Visit& v : record.visits) visits.push_back({{"codes", v.codes}, {"labs", v.labs}, {"dt", v.delta_t}});
  std::vector<int> mask(record.ground_truth_mask.begin(), record.ground_truth_mask.end());
  json j = {{"version", kJsonlVersion}, {"type", "record"}, {"id", record.id}, {"label", record.label},
            {"planted_label", record.planted_label}, {"visits", std::move(visits)}, {"ground_truth_mask", mask}};
  return j.dump();
}

PatientRecord record_from_jsonl_line(std::string_view line, std::size_t line_number) {
  try {
    const json j = json::parse(line);
    if (j.at("version").get<int>() != kJsonlVersion) throw ParseError("unsupported version", line_number);
    if (j.at("type").get<std::string>() != "record") throw ParseError("not a record line", line_number);
    PatientRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.label = j.at("label").get<int>();
    r.planted_label = j.value("planted_label", -1);
    for (const json& v : j.at("visits")) {
      Visit visit;
      visit.codes = v.at("codes").get<std::vector<int>>();
      visit.labs = v.at("labs").get<std::vector<double>>();
      visit.delta_t = v.at("dt").get<double>();
      if (visit.delta_t < 0.0) throw ParseError("negative delta-t", line_number);
      r.visits.push_back(std::move(visit));
    }
    if (j.contains("ground_truth_mask")) {
      for (int m : j.at("ground_truth_mask").get<std::vector<int>>()) r.ground_truth_mask.push_back(m != 0);
    }
    return r;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(e.what(), line_number);
  }
}

std::string header_jsonl_line(std::string_view config_hash) {
  return json{{"version", kJsonlVersion}, {"type", "header"}, {"config_hash", config_hash}}.dump();
}

bool is_header_line(std::string_view line) { return line.find("\"type\":\"header\"") != std::string_view::npos; }

void write_jsonl(std::ostream& out, const Dataset& dataset) {
  for (const PatientRecord& r : dataset) out << to_jsonl_line(r) << '\n';
}

Dataset read_jsonl(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || is_header_line(line)) continue;
    out.push_back(record_from_jsonl_line(line, n));
  }
  return out;
}

void export_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_jsonl(out, dataset);
  if (!out) throw Error("write failed: " + path.string());
}

Dataset import_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_jsonl(in);
}

}  // namespace tsattr
