#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsattr/attribution.hpp"
#include "tsattr/error.hpp"
#include "tsattr/masking.hpp"
#include "tsattr/model.hpp"
#include "tsattr/synth.hpp"

namespace tsattr {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct MethodSettings {
  int ig_steps = 50;
  int lime_samples = 200;
  double lime_kernel_width = 0.0;
  double lime_ridge = 1e-3;
  int shap_coalitions = 0;
  int shap_min_coalitions = 254;
  double gim_temperature = 2.0;
  std::vector<std::string> gim_gate_tags;
  bool gim_freeze_norm_stats = true;
};

struct BenchSeeds {
  std::uint64_t data = 1;
  std::uint64_t train = 2;
  std::uint64_t bench = 3;
};

struct BenchConfig {
  std::filesystem::path output_dir = "bench-out";
  std::vector<std::string> tasks;
  std::vector<std::string> models;
  std::vector<std::string> methods;
  std::size_t n_train = 10000;
  std::size_t n_test = 2000;
  std::size_t interpret_size = 1000;
  BenchSeeds seeds;
  int embed_dim = 64;
  int hidden_dim = 64;
  int n_heads = 4;
  int n_layers = 2;
  double dropout = 0.0;
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 32;
  double clip_norm = 5.0;
  MethodSettings method_settings;
  std::vector<double> k_grid;
  LabReplacement lab_replacement = LabReplacement::kTrainingMean;
  double runtime_population = 137778;
  /// Execution-only settings; excluded from the config hash.
  int workers = 1;

  BenchConfig();
  void validate() const;
  /// Every field that influences outputs, in canonical form.
  nlohmann::json to_json() const;
  /// 16 hex digits of FNV-1a over `to_json()`.
  std::string hash() const;
};

/// Parses JSON with comments; unknown keys and wrong types are errors.
BenchConfig config_from_json(const nlohmann::json& j);
BenchConfig load_config(const std::filesystem::path& path);

/// data = n, train = n + 1, bench = n + 2.
void apply_seed_override(BenchConfig& config, std::uint64_t seed);
/// Restricts each category (method, model, task) named in `names` to the named entries.
void apply_only_filter(BenchConfig& config, const std::vector<std::string>& names);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::string file_checksum(const std::filesystem::path& path);

/// Runs f(i) for i in [0, n) on up to `workers` threads. Callers store results
/// by index, so output order never depends on scheduling. Rethrows the first error.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& f) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) pool.emplace_back(run);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- layout ---------------------------------------------------------------------

struct BenchPaths {
  std::filesystem::path root;

  std::filesystem::path data_dir(const std::string& task) const { return root / "data" / task; }
  std::filesystem::path split(const std::string& task, const std::string& name) const {
    return data_dir(task) / (name + ".jsonl");
  }
  std::filesystem::path checkpoint(const std::string& task, const std::string& model) const {
    return root / "models" / task / (model + ".ckpt");
  }
  std::filesystem::path attribution(const std::string& task, const std::string& model,
                                    const std::string& method) const {
    return root / "attributions" / task / model / (method + ".jsonl");
  }
  std::filesystem::path reports() const { return root / "reports"; }
};

// ---- attribution dispatch ---------------------------------------------------------

/// Every benchmark method name, in display order.
std::vector<std::string> method_names();

/// Seed for a method's randomness on one record.
std::uint64_t method_seed(const BenchConfig& config, const std::string& method, std::uint64_t record_id);

/// Runs one named attributor. Throws NotApplicableError where the method does not apply.
AttributionMap attribute(const std::string& method, const Model& model, const PatientRecord& record,
                         int target_class, const BenchConfig& config, std::uint64_t seed);

/// Planted ground truth plus half a random-baseline score: positions in the
/// ground-truth mask rank first, ties broken at random.
AttributionMap oracle_attribution(const PatientRecord& record, std::uint64_t seed);

/// Records used for attribution and evaluation.
Dataset load_interpret_split(const BenchConfig& config, const std::string& task);
Model load_model(const BenchConfig& config, const std::string& task, const std::string& model);
std::vector<AttributionLine> load_attributions(const std::filesystem::path& path);

// ---- commands ---------------------------------------------------------------------

struct CommandStatus {
  /// Per-pair failures that did not abort the command (divergence, gaps).
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

CommandStatus cmd_gen_data(const BenchConfig& config);
CommandStatus cmd_train(const BenchConfig& config);
CommandStatus cmd_attribute(const BenchConfig& config);
CommandStatus cmd_report(const BenchConfig& config);
CommandStatus cmd_all(const BenchConfig& config);

}  // namespace tsattr
