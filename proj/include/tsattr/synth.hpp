#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tsattr/record.hpp"

namespace tsattr {

enum class TaskKind { kMortality, kDka, kLos };

/// Planted rule: a record belongs to positive class k when a driver code of
/// group k occurs within the last `window` visits AND lab `lab_index` exceeds
/// `lab_threshold` within the same window. Otherwise class 0.
struct TaskSpec {
  TaskKind kind = TaskKind::kMortality;
  std::string name;
  int n_classes = 2;
  /// Prior of each positive class.
  double positive_rate = 0.3;
  /// One driver group per positive class.
  std::vector<std::vector<int>> driver_codes;
  int lab_index = 0;
  double lab_threshold = 2.0;
  double label_noise = 0.02;
  int window = 8;

  int vocab_size = 128;
  int n_labs = 6;
  int min_visits = 6;
  int max_visits = 20;
  int max_background_codes = 3;
  double mean_delta_t_hours = 36.0;

  void validate() const;
  /// Class prior implied by `positive_rate`.
  std::vector<double> class_prior() const;
};

TaskSpec task_spec(TaskKind kind);
/// Accepts "mortality-like", "dka-like", "los-like".
TaskSpec task_spec(std::string_view name);
std::vector<std::string> task_names();

/// Class the planted rule assigns to `record` (ignores label noise).
int planted_class(const TaskSpec& task, const PatientRecord& record);

/// Posterior P(label = c | record) under the generator, the Bayes-optimal score.
std::vector<double> bayes_posterior(const TaskSpec& task, const PatientRecord& record);

/// Generates `n` records; record i depends only on (task, seed, first_id + i).
Dataset generate(const TaskSpec& task, std::size_t n, std::uint64_t seed, std::uint64_t first_id = 0);
PatientRecord generate_record(const TaskSpec& task, std::uint64_t seed, std::uint64_t id);

// ---- JSONL ---------------------------------------------------------------

inline constexpr int kJsonlVersion = 1;

std::string to_jsonl_line(const PatientRecord& record);
PatientRecord record_from_jsonl_line(std::string_view line, std::size_t line_number = 0);

/// Provenance line written first by the benchmark; readers skip it.
std::string header_jsonl_line(std::string_view config_hash);
bool is_header_line(std::string_view line);
void write_jsonl(std::ostream& out, const Dataset& dataset);
Dataset read_jsonl(std::istream& in);
void export_jsonl(const Dataset& dataset, const std::filesystem::path& path);
Dataset import_jsonl(const std::filesystem::path& path);

}  // namespace tsattr
