#include "tsattr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "tsattr/attention.hpp"
#include "tsattr/faithfulness.hpp"
#include "tsattr/gradient.hpp"
#include "tsattr/perturbation.hpp"
#include "tsattr/report.hpp"
#include "tsattr/rng.hpp"
#include "tsattr/train.hpp"

namespace tsattr {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config -----------------------------------------------------------------------

BenchConfig::BenchConfig()
    : tasks(task_names()), models(architecture_names()), methods(method_names()), k_grid(default_k_grid()) {}

namespace {

// Reads known keys from one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(label(key) + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw ConfigError(label(key) + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(label(key) + ": expected a number");
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
  }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, label(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(label(key) + ": unknown key");
    }
  }

 private:
  std::string label(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void require_unique(const std::vector<T>& items, const char* what) {
  std::set<T> seen;
  for (const T& i : items) {
    if (!seen.insert(i).second) throw ConfigError(std::string("duplicate entry in ") + what);
  }
}

}  // namespace

BenchConfig config_from_json(const json& j) {
  BenchConfig c;
  ObjectReader root(j, "");
  std::string output_dir = c.output_dir.string();
  root.read("output_dir", output_dir);
  c.output_dir = output_dir;
  root.read("tasks", c.tasks);
  root.read("models", c.models);
  root.read("methods", c.methods);
  root.read("workers", c.workers);
  root.read("runtime_population", c.runtime_population);
  {
    ObjectReader d = root.child("dataset");
    d.read("n_train", c.n_train);
    d.read("n_test", c.n_test);
    d.read("interpret_size", c.interpret_size);
    d.finish();
  }
  {
    ObjectReader s = root.child("seeds");
    s.read("data", c.seeds.data);
    s.read("train", c.seeds.train);
    s.read("bench", c.seeds.bench);
    s.finish();
  }
  {
    ObjectReader m = root.child("model");
    m.read("embed_dim", c.embed_dim);
    m.read("hidden_dim", c.hidden_dim);
    m.read("n_heads", c.n_heads);
    m.read("n_layers", c.n_layers);
    m.read("dropout", c.dropout);
    m.finish();
  }
  {
    ObjectReader t = root.child("training");
    t.read("epochs", c.epochs);
    t.read("learning_rate", c.learning_rate);
    t.read("batch_size", c.batch_size);
    t.read("clip_norm", c.clip_norm);
    t.finish();
  }
  {
    ObjectReader m = root.child("method_settings");
    MethodSettings& s = c.method_settings;
    m.read("ig_steps", s.ig_steps);
    m.read("lime_samples", s.lime_samples);
    m.read("lime_kernel_width", s.lime_kernel_width);
    m.read("lime_ridge", s.lime_ridge);
    m.read("shap_coalitions", s.shap_coalitions);
    m.read("shap_min_coalitions", s.shap_min_coalitions);
    m.read("gim_temperature", s.gim_temperature);
    m.read("gim_gate_tags", s.gim_gate_tags);
    m.read("gim_freeze_norm_stats", s.gim_freeze_norm_stats);
    m.finish();
  }
  {
    ObjectReader e = root.child("evaluation");
    e.read("k_grid", c.k_grid);
    std::string lab = std::string(to_string(c.lab_replacement));
    e.read("lab_replacement", lab);
    try {
      c.lab_replacement = lab_replacement_from_string(lab);
    } catch (const Error& err) {
      throw ConfigError(std::string("evaluation.lab_replacement: ") + err.what());
    }
    e.finish();
  }
  root.finish();
  c.validate();
  return c;
}

BenchConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void BenchConfig::validate() const {
  if (tasks.empty() || models.empty() || methods.empty()) {
    throw ConfigError("tasks, models and methods must each name at least one entry");
  }
  require_unique(tasks, "tasks");
  require_unique(models, "models");
  require_unique(methods, "methods");
  for (const std::string& t : tasks) {
    try {
      task_spec(t);
    } catch (const Error&) {
      throw ConfigError("unknown task '" + t + "'");
    }
  }
  for (const std::string& m : models) {
    try {
      architecture_from_string(m);
    } catch (const Error&) {
      throw ConfigError("unknown model '" + m + "'");
    }
  }
  const std::vector<std::string> known = method_names();
  for (const std::string& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("unknown method '" + m + "'");
  }
  if (n_train == 0 || n_test == 0) throw ConfigError("dataset sizes must be positive");
  if (interpret_size == 0 || interpret_size > n_test) {
    throw ConfigError("interpret_size must lie in [1, n_test]");
  }
  if (k_grid.empty()) throw ConfigError("k_grid must not be empty");
  for (double k : k_grid) {
    if (!(k > 0.0 && k <= 1.0)) throw ConfigError("k_grid entries must lie in (0, 1]");
  }
  const MethodSettings& s = method_settings;
  if (s.ig_steps < 1) throw ConfigError("ig_steps must be >= 1");
  if (s.lime_samples < 2) throw ConfigError("lime_samples must be >= 2");
  if (s.lime_kernel_width < 0.0 || s.lime_ridge < 0.0) throw ConfigError("lime settings must be non-negative");
  if (s.shap_coalitions < 0 || s.shap_min_coalitions < 0) throw ConfigError("shap settings must be non-negative");
  if (!(s.gim_temperature > 0.0)) throw ConfigError("gim_temperature must be positive");
  for (const std::string& tag : s.gim_gate_tags) {
    if (tag != kUpdateGateTag && tag != kResetGateTag) throw ConfigError("unknown gim gate tag '" + tag + "'");
  }
  if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0) || !(clip_norm > 0.0)) {
    throw ConfigError("invalid training settings");
  }
  if (!(runtime_population > 0.0)) throw ConfigError("runtime_population must be positive");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  ModelConfig mc;
  mc.embed_dim = embed_dim;
  mc.hidden_dim = hidden_dim;
  mc.n_heads = n_heads;
  mc.n_layers = n_layers;
  mc.dropout = dropout;
  for (const std::string& m : models) {
    mc.architecture = architecture_from_string(m);
    try {
      mc.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
}

json BenchConfig::to_json() const {
  const MethodSettings& s = method_settings;
  return {{"tasks", tasks},
          {"models", models},
          {"methods", methods},
          {"runtime_population", runtime_population},
          {"dataset", {{"n_train", n_train}, {"n_test", n_test}, {"interpret_size", interpret_size}}},
          {"seeds", {{"data", seeds.data}, {"train", seeds.train}, {"bench", seeds.bench}}},
          {"model",
           {{"embed_dim", embed_dim}, {"hidden_dim", hidden_dim}, {"n_heads", n_heads}, {"n_layers", n_layers},
            {"dropout", dropout}}},
          {"training",
           {{"epochs", epochs}, {"learning_rate", learning_rate}, {"batch_size", batch_size}, {"clip_norm", clip_norm}}},
          {"method_settings",
           {{"ig_steps", s.ig_steps},
            {"lime_samples", s.lime_samples},
            {"lime_kernel_width", s.lime_kernel_width},
            {"lime_ridge", s.lime_ridge},
            {"shap_coalitions", s.shap_coalitions},
            {"shap_min_coalitions", s.shap_min_coalitions},
            {"gim_temperature", s.gim_temperature},
            {"gim_gate_tags", s.gim_gate_tags},
            {"gim_freeze_norm_stats", s.gim_freeze_norm_stats}}},
          {"evaluation", {{"k_grid", k_grid}, {"lab_replacement", to_string(lab_replacement)}}}};
}

std::string BenchConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

void apply_seed_override(BenchConfig& config, std::uint64_t seed) {
  config.seeds = {seed, seed + 1, seed + 2};
}

void apply_only_filter(BenchConfig& config, const std::vector<std::string>& names) {
  if (names.empty()) return;
  std::vector<std::string> tasks, models, methods;
  for (const std::string& n : names) {
    if (std::find(config.tasks.begin(), config.tasks.end(), n) != config.tasks.end()) {
      tasks.push_back(n);
    } else if (std::find(config.models.begin(), config.models.end(), n) != config.models.end()) {
      models.push_back(n);
    } else if (std::find(config.methods.begin(), config.methods.end(), n) != config.methods.end()) {
      methods.push_back(n);
    } else {
      throw ConfigError("--only: '" + n + "' is not a configured task, model or method");
    }
  }
  if (!tasks.empty()) config.tasks = tasks;
  if (!models.empty()) config.models = models;
  if (!methods.empty()) config.methods = methods;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) out[static_cast<std::size_t>(i)] = digits[value & 0xF];
  return out;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file so readers never see partial output.
void write_file(const fs::path& path, std::string_view content) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error("cannot create " + path.parent_path().string() + ": " + ec.message());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json_or_empty(const fs::path& path) {
  if (!fs::exists(path)) return json::object();
  try {
    return json::parse(read_file(path));
  } catch (const json::exception&) {
    return json::object();
  }
}

void log(const std::string& message) { std::cerr << message << std::endl; }

std::string dataset_text(const Dataset& records, std::string_view config_hash) {
  std::string out = header_jsonl_line(config_hash) + "\n";
  for (const PatientRecord& r : records) out += to_jsonl_line(r) + "\n";
  return out;
}

std::uint64_t task_seed(const BenchConfig& config, const std::string& task) {
  return mix_seed(config.seeds.data, fnv1a64(task));
}

ModelConfig model_config(const BenchConfig& config, const std::string& task, const std::string& model) {
  const TaskSpec spec = task_spec(task);
  ModelConfig mc;
  mc.architecture = architecture_from_string(model);
  mc.vocab_size = spec.vocab_size;
  mc.n_labs = spec.n_labs;
  mc.n_classes = spec.n_classes;
  mc.max_visits = std::max(32, spec.max_visits);
  mc.embed_dim = config.embed_dim;
  mc.hidden_dim = config.hidden_dim;
  mc.n_heads = config.n_heads;
  mc.n_layers = config.n_layers;
  mc.dropout = config.dropout;
  return mc;
}

fs::path model_manifest(const BenchPaths& paths, const std::string& task, const std::string& model) {
  fs::path p = paths.checkpoint(task, model);
  p.replace_extension(".json");
  return p;
}

}  // namespace

std::string file_checksum(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

// ---- attribution dispatch ----------------------------------------------------------

std::vector<std::string> method_names() { return method_order(); }

std::uint64_t method_seed(const BenchConfig& config, const std::string& method, std::uint64_t record_id) {
  return mix_seed(mix_seed(config.seeds.bench, fnv1a64(method)), record_id);
}

AttributionMap attribute(const std::string& method, const Model& model, const PatientRecord& record,
                         int target_class, const BenchConfig& config, std::uint64_t seed) {
  const MethodSettings& s = config.method_settings;
  const MaskPolicy policy = model.mask_policy(config.lab_replacement);
  if (method == "chefer") return chefer(model, record, target_class);
  if (method == "deeplift") return deeplift(model, record, policy, target_class);
  if (method == "gim") {
    GimOptions o;
    o.temperature = s.gim_temperature;
    o.gate_tags = {s.gim_gate_tags.begin(), s.gim_gate_tags.end()};
    o.freeze_norm_stats = s.gim_freeze_norm_stats;
    return gim(model, record, policy, target_class, o);
  }
  if (method == "integrated_gradients") {
    return integrated_gradients(model, record, policy, target_class, {s.ig_steps});
  }
  if (method == "lime") {
    LimeOptions o;
    o.n_samples = s.lime_samples;
    o.kernel_width = s.lime_kernel_width;
    o.ridge_lambda = s.lime_ridge;
    o.seed = seed;
    return lime(model, record, policy, target_class, o);
  }
  if (method == "kernel_shap") {
    KernelShapOptions o;
    o.n_coalitions = s.shap_coalitions;
    o.min_coalitions = s.shap_min_coalitions;
    o.seed = seed;
    return kernel_shap(model, record, policy, target_class, o);
  }
  if (method == "random") {
    AttributionMap map = random_baseline(record, seed);
    map.target_class = target_class;
    return map;
  }
  throw InvalidArgument("unknown method '" + method + "'");
}

AttributionMap oracle_attribution(const PatientRecord& record, std::uint64_t seed) {
  AttributionMap map = random_baseline(record, seed);
  map.method = "oracle";
  if (record.ground_truth_mask.size() != map.scores.size()) {
    throw InvalidArgument("oracle: record " + std::to_string(record.id) + " carries no ground-truth mask");
  }
  for (std::size_t i = 0; i < map.scores.size(); ++i) {
    map.scores[i] = (record.ground_truth_mask[i] ? 1.0 : 0.0) + 0.5 * map.scores[i];
  }
  return map;
}

Dataset load_interpret_split(const BenchConfig& config, const std::string& task) {
  const fs::path path = BenchPaths{config.output_dir}.split(task, "interpret");
  if (!fs::exists(path)) throw Error("missing interpret split for task " + task + ": " + path.string());
  return import_jsonl(path);
}

Model load_model(const BenchConfig& config, const std::string& task, const std::string& model) {
  const fs::path path = BenchPaths{config.output_dir}.checkpoint(task, model);
  if (!fs::exists(path)) {
    throw Error("missing checkpoint for (" + task + ", " + model + "): " + path.string());
  }
  return load_checkpoint(path);
}

std::vector<AttributionLine> load_attributions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<AttributionLine> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || is_header_line(line)) continue;
    out.push_back(attribution_from_jsonl_line(line, n));
  }
  return out;
}

// ---- commands ---------------------------------------------------------------------

CommandStatus cmd_gen_data(const BenchConfig& config) {
  config.validate();
  const BenchPaths paths{config.output_dir};
  const std::string hash = config.hash();
  for (const std::string& task : config.tasks) {
    const TaskSpec spec = task_spec(task);
    const std::uint64_t seed = task_seed(config, task);
    const Dataset train = generate(spec, config.n_train, seed, 0);
    const Dataset test = generate(spec, config.n_test, seed, config.n_train);
    std::vector<std::size_t> idx(test.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_rng(seed, 0x696e74ULL);
    for (std::size_t i = 0; i < config.interpret_size; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(config.interpret_size);
    std::sort(idx.begin(), idx.end());
    Dataset interpret;
    for (std::size_t i : idx) interpret.push_back(test[i]);

    json files = json::object();
    for (const auto& [name, records] : {std::pair<std::string, const Dataset*>{"train", &train},
                                        {"test", &test}, {"interpret", &interpret}}) {
      const std::string text = dataset_text(*records, hash);
      write_file(paths.split(task, name), text);
      files[name] = {{"file", name + ".jsonl"}, {"records", records->size()}, {"fnv1a64", hex64(fnv1a64(text))}};
    }
    write_json(paths.data_dir(task) / "manifest.json",
               {{"config_hash", hash}, {"task", task}, {"seed", seed}, {"files", files}});
    log("[gen-data] " + task + ": " + std::to_string(train.size()) + " train, " + std::to_string(test.size()) +
        " test, " + std::to_string(interpret.size()) + " interpret");
  }
  return {};
}

CommandStatus cmd_train(const BenchConfig& config) {
  config.validate();
  const BenchPaths paths{config.output_dir};
  const std::string hash = config.hash();
  struct Pair {
    std::string task, model;
  };
  std::vector<Pair> pairs;
  for (const std::string& t : config.tasks) {
    for (const std::string& m : config.models) pairs.push_back({t, m});
  }
  std::vector<std::optional<MetricsRow>> rows(pairs.size());
  std::vector<std::string> errors(pairs.size());
  parallel_for(pairs.size(), config.workers, [&](std::size_t i) {
    const auto& [task, arch] = pairs[i];
    const fs::path ckpt = paths.checkpoint(task, arch);
    const fs::path manifest = model_manifest(paths, task, arch);
    const auto start = std::chrono::steady_clock::now();
    const Dataset test = import_jsonl(paths.split(task, "test"));
    const json existing = read_json_or_empty(manifest);
    if (fs::exists(ckpt) && existing.value("config_hash", "") == hash &&
        existing.value("fnv1a64", "") == file_checksum(ckpt)) {
      rows[i] = MetricsRow{task, arch, evaluate(load_checkpoint(ckpt), test)};
      log("[train] " + task + "/" + arch + ": checkpoint up to date");
      return;
    }
    const Dataset train_set = import_jsonl(paths.split(task, "train"));
    const std::uint64_t seed = mix_seed(config.seeds.train, fnv1a64(task + "/" + arch));
    TrainOptions options;
    options.epochs = config.epochs;
    options.learning_rate = config.learning_rate;
    options.batch_size = config.batch_size;
    options.clip_norm = config.clip_norm;
    options.seed = seed;
    try {
      TrainResult result = train(Model(model_config(config, task, arch), seed), train_set, test, options);
      fs::create_directories(ckpt.parent_path());
      const fs::path tmp = ckpt.string() + ".tmp";
      save_checkpoint(result.model, tmp);
      fs::rename(tmp, ckpt);
      write_json(manifest, {{"config_hash", hash},
                            {"task", task},
                            {"model", arch},
                            {"seed", seed},
                            {"status", "complete"},
                            {"fnv1a64", file_checksum(ckpt)}});
      rows[i] = MetricsRow{task, arch, result.metrics};
      const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
      log("[train] " + task + "/" + arch + ": done in " + format_number(took.count()) + " s");
    } catch (const DivergenceError& e) {
      errors[i] = "(" + task + ", " + arch + "): " + e.what();
      write_json(manifest, {{"config_hash", hash}, {"task", task}, {"model", arch}, {"status", "diverged"},
                            {"error", e.what()}});
      log("[train] " + task + "/" + arch + ": diverged: " + e.what());
    }
  });
  CommandStatus status;
  std::vector<MetricsRow> done;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (rows[i]) done.push_back(*rows[i]);
    if (!errors[i].empty()) status.failures.push_back(errors[i]);
  }
  write_file(paths.root / "models" / "metrics.csv", metrics_csv(done, hash));
  return status;
}

CommandStatus cmd_attribute(const BenchConfig& config) {
  config.validate();
  const BenchPaths paths{config.output_dir};
  const std::string hash = config.hash();
  const fs::path manifest_path = paths.root / "attributions" / "manifest.json";
  json manifest = read_json_or_empty(manifest_path);
  if (manifest.value("config_hash", "") != hash) manifest = {{"config_hash", hash}, {"entries", json::object()}};
  json& entries = manifest["entries"];

  for (const std::string& task : config.tasks) {
    const Dataset records = load_interpret_split(config, task);
    for (const std::string& arch : config.models) {
      std::optional<Model> model;
      for (const std::string& method : config.methods) {
        const std::string key = task + "/" + arch + "/" + method;
        if (!method_applies(method, arch)) {
          entries[key] = {{"status", "not-applicable"},
                          {"reason", method + " requires attention layers; " + arch + " has none"}};
          write_json(manifest_path, manifest);
          continue;
        }
        const fs::path out = paths.attribution(task, arch, method);
        if (entries.contains(key) && entries[key].value("status", "") == "complete" && fs::exists(out) &&
            entries[key].value("fnv1a64", "") == file_checksum(out)) {
          log("[attribute] " + key + ": complete, skipped");
          continue;
        }
        if (!model) model = load_model(config, task, arch);
        const Model& m = *model;
        std::vector<AttributionLine> lines(records.size());
        parallel_for(records.size(), config.workers, [&](std::size_t i) {
          const PatientRecord& r = records[i];
          const int target = predict_class(m, r);
          const auto start = std::chrono::steady_clock::now();
          AttributionMap map = attribute(method, m, r, target, config, method_seed(config, method, r.id));
          const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
          map.validate(feature_count(r));
          lines[i] = {r.id, std::move(map), took.count()};
        });
        std::string text = header_jsonl_line(hash) + "\n";
        double total = 0.0;
        for (const AttributionLine& l : lines) {
          text += to_jsonl_line(l) + "\n";
          total += l.runtime_seconds;
        }
        write_file(out, text);
        const double per_record = total / static_cast<double>(std::max<std::size_t>(1, lines.size()));
        entries[key] = {{"status", "complete"},
                        {"file", fs::relative(out, paths.root).generic_string()},
                        {"records", lines.size()},
                        {"seconds_per_record", per_record},
                        {"fnv1a64", hex64(fnv1a64(text))}};
        write_json(manifest_path, manifest);
        log("[attribute] " + key + ": " + std::to_string(lines.size()) + " records, " + format_number(per_record) +
            " s/record");
      }
    }
  }
  return {};
}

CommandStatus cmd_report(const BenchConfig& config) {
  config.validate();
  const BenchPaths paths{config.output_dir};
  const std::string hash = config.hash();
  std::vector<FaithfulnessReport> reports;
  std::vector<RecordFaithfulness> record_rows;
  std::vector<RuntimeProfile> runtimes;
  std::vector<std::string> gaps;

  for (const std::string& task : config.tasks) {
    const Dataset records = load_interpret_split(config, task);
    std::map<std::uint64_t, const PatientRecord*> by_id;
    for (const PatientRecord& r : records) by_id[r.id] = &r;
    for (const std::string& arch : config.models) {
      std::optional<Model> model;
      for (const std::string& method : config.methods) {
        if (!method_applies(method, arch)) continue;
        const fs::path path = paths.attribution(task, arch, method);
        if (!fs::exists(path)) {
          gaps.push_back("(" + method + ", " + arch + ", " + task + ")");
          continue;
        }
        if (!model) model = load_model(config, task, arch);
        const std::vector<AttributionLine> lines = load_attributions(path);
        if (lines.empty()) {
          gaps.push_back("(" + method + ", " + arch + ", " + task + ")");
          continue;
        }
        const MaskPolicy policy = model->mask_policy(config.lab_replacement);
        const ProbabilityFn predict = model_probabilities(*model);
        std::vector<FaithfulnessScores> scores(lines.size());
        parallel_for(lines.size(), config.workers, [&](std::size_t i) {
          const auto it = by_id.find(lines[i].record_id);
          if (it == by_id.end()) {
            throw Error(path.string() + ": record " + std::to_string(lines[i].record_id) + " not in interpret split");
          }
          scores[i] = faithfulness(predict, *it->second, lines[i].map, config.k_grid, policy);
        });
        double runtime = 0.0;
        for (const AttributionLine& l : lines) runtime += l.runtime_seconds;
        runtime /= static_cast<double>(lines.size());
        reports.push_back(make_report(method, arch, task, scores, config.k_grid, runtime));
        runtimes.push_back({method, arch, task, runtime, lines.size()});
        for (std::size_t i = 0; i < lines.size(); ++i) {
          record_rows.push_back({task, arch, method, lines[i].record_id, scores[i]});
        }
        log("[report] " + task + "/" + arch + "/" + method + ": composite " + format_number(reports.back().composite));
      }
    }
  }

  const fs::path dir = paths.reports();
  write_file(dir / "faithfulness.csv", faithfulness_csv(reports, hash));
  write_file(dir / "faithfulness_records.csv", record_faithfulness_csv(record_rows, hash));
  write_file(dir / "runtime.csv", runtime_csv(runtimes, config.runtime_population, hash));

  CommandStatus status;
  std::string markdown = "# Head-to-head wins\n\n";
  if (gaps.empty() && !reports.empty()) {
    const WinMatrix wm = win_matrix(reports);
    write_file(dir / "win_matrix.csv", wm.to_csv(hash));
    markdown += "Cell: model-task pairs where the row method's composite score beats the column method's.\n\n";
    markdown += wm.to_markdown();
    fs::remove(dir / "gaps.txt");
  } else {
    std::string listing;
    for (const std::string& g : gaps) listing += g + "\n";
    write_file(dir / "gaps.txt", listing);
    fs::remove(dir / "win_matrix.csv");
    markdown += "Incomplete grid; missing (method, model, task) cells:\n\n";
    for (const std::string& g : gaps) markdown += "- " + g + "\n";
    for (const std::string& g : gaps) status.failures.push_back("missing attribution " + g);
  }
  markdown += "\nconfig hash: " + hash + "\n";
  write_file(dir / "win_matrix.md", markdown);

  for (const std::string& task : config.tasks) {
    std::vector<ScatterPoint> faith, speed;
    for (const FaithfulnessReport& r : reports) {
      if (r.task != task) continue;
      faith.push_back({method_display_name(r.method), r.model, r.sufficiency, r.comprehensiveness});
      speed.push_back({method_display_name(r.method), r.model, std::max(r.runtime_per_record, 1e-6),
                       r.comprehensiveness});
    }
    write_file(dir / ("faithfulness_" + task + ".svg"),
               scatter_svg({"Faithfulness, " + task, "sufficiency (lower is better)",
                            "comprehensiveness (higher is better)", hash, false},
                           faith));
    write_file(dir / ("runtime_" + task + ".svg"),
               scatter_svg({"Runtime vs comprehensiveness, " + task, "seconds per record (log scale)",
                            "comprehensiveness", hash, true},
                           speed));
  }
  return status;
}

CommandStatus cmd_all(const BenchConfig& config) {
  CommandStatus status;
  for (auto* step : {&cmd_gen_data, &cmd_train, &cmd_attribute, &cmd_report}) {
    const CommandStatus s = step(config);
    status.failures.insert(status.failures.end(), s.failures.begin(), s.failures.end());
  }
  return status;
}

}  // namespace tsattr
