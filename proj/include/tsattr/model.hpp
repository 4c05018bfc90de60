#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tsattr/autodiff.hpp"
#include "tsattr/masking.hpp"
#include "tsattr/record.hpp"

namespace tsattr {

using ad::Tensor;

enum class Architecture { kTransformer, kStageRecurrent, kStageAttn };

std::string_view to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);
std::vector<std::string> architecture_names();
bool has_attention(Architecture a);

struct ModelConfig {
  Architecture architecture = Architecture::kTransformer;
  int vocab_size = 128;
  int n_labs = 6;
  int embed_dim = 64;
  int hidden_dim = 64;
  int n_heads = 4;
  /// Self-attention layers of the transformer; stage-attn always has one.
  int n_layers = 2;
  int n_classes = 2;
  int max_visits = 32;
  double dropout = 0.0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
  /// Attention layers the architecture records (0 for stage-recurrent).
  int attention_layers() const;
};

/// Gate tags attached to the stage cell's elementwise products.
inline constexpr std::string_view kUpdateGateTag = "update-gate";
inline constexpr std::string_view kResetGateTag = "reset-gate";

class Model {
 public:
  /// Deterministically initialized parameters for (config, seed).
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  const std::map<std::string, Tensor>& parameters() const { return params_; }
  std::map<std::string, Tensor>& parameters() { return params_; }
  const Tensor& param(const std::string& name) const;

  /// Training-set lab means travel with the model for the training-mean mask policy.
  const std::vector<double>& lab_means() const { return lab_means_; }
  void set_lab_means(std::vector<double> means) { lab_means_ = std::move(means); }
  MaskPolicy mask_policy(LabReplacement replacement = LabReplacement::kTrainingMean) const;

  /// Re-zeroes the PAD embedding row.
  void enforce_invariants();

  /// Bitwise equality of configuration, seed, parameters and lab means.
  friend bool operator==(const Model& a, const Model& b);

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::map<std::string, Tensor> params_;
  std::vector<double> lab_means_;
};

/// Per-position contribution vectors: row p is the embedding-space input of
/// feature position p (code embedding, or lab value times its lab direction).
/// Visit embeddings are sums of these rows plus time terms, so attribution
/// over rows of this matrix covers every maskable position exactly once.
Tensor input_contributions(const Model& model, const PatientRecord& record);

struct ForwardTrace {
  ad::Tape tape;
  ad::Var logits;
  /// [layer][head] softmax nodes, each visits x visits.
  std::vector<std::vector<ad::Var>> attention;
  /// Leaf holding `input_contributions`; row p belongs to positions[p].
  ad::Var input;
  std::vector<FeaturePosition> positions;
  /// Present when traced with trainable parameters.
  std::map<std::string, ad::Var> parameter_leaves;

  Eigen::VectorXd logit_values() const;
  Eigen::VectorXd probabilities() const;
  Tensor attention_map(std::size_t layer, std::size_t head) const { return tape.value(attention.at(layer).at(head)); }
};

enum class ParameterMode { kConstant, kTrainable };

struct TraceOptions {
  ParameterMode parameters = ParameterMode::kConstant;
  /// Inverted-dropout mask on the pooled representation (training only).
  const Tensor* dropout_mask = nullptr;
};

/// Forward pass recorded on a fresh tape, input leaf = contributions of `record`.
ForwardTrace forward_traced(const Model& model, const PatientRecord& record, const TraceOptions& options = {});
/// Same, but with caller-supplied contribution values (interpolated or reference inputs).
ForwardTrace forward_traced(const Model& model, const PatientRecord& record, const Tensor& contributions,
                            const TraceOptions& options = {});

Eigen::VectorXd predict_proba(const Model& model, const PatientRecord& record);
int predict_class(const Model& model, const PatientRecord& record);

/// Scalar explained by white-box attributors: the target logit minus the mean
/// logit. Softmax is invariant to the subtracted shift, so the score moves
/// with the target probability while staying linear in the logits.
ad::Var target_score(ForwardTrace& trace, int target_class);

// ---- checkpoints ---------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace tsattr
