#include "tsattr/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tsattr/error.hpp"
#include "tsattr/rng.hpp"

namespace tsattr {

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::kTransformer: return "transformer";
    case Architecture::kStageRecurrent: return "stage-recurrent";
    case Architecture::kStageAttn: return "stage-attn";
  }
  return "unknown";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "transformer") return Architecture::kTransformer;
  if (s == "stage-recurrent") return Architecture::kStageRecurrent;
  if (s == "stage-attn") return Architecture::kStageAttn;
  throw InvalidArgument("unknown architecture '" + std::string(s) + "'");
}

std::vector<std::string> architecture_names() { return {"transformer", "stage-recurrent", "stage-attn"}; }

bool has_attention(Architecture a) { return a != Architecture::kStageRecurrent; }

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw InvalidArgument(std::string("model config: ") + what + " must be positive");
  };
  positive(vocab_size, "vocab-size");
  positive(n_labs, "n-labs");
  positive(embed_dim, "embed-dim");
  positive(hidden_dim, "hidden-dim");
  positive(n_heads, "n-heads");
  positive(n_layers, "n-layers");
  positive(max_visits, "max-visits");
  if (n_classes < 2) throw InvalidArgument("model config: n-classes must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("model config: dropout must lie in [0, 1)");
  if (architecture == Architecture::kTransformer && embed_dim % n_heads != 0) {
    throw InvalidArgument("model config: embed-dim must be divisible by n-heads");
  }
  if (architecture == Architecture::kStageAttn && hidden_dim % n_heads != 0) {
    throw InvalidArgument("model config: hidden-dim must be divisible by n-heads");
  }
}

int ModelConfig::attention_layers() const {
  switch (architecture) {
    case Architecture::kTransformer: return n_layers;
    case Architecture::kStageAttn: return 1;
    case Architecture::kStageRecurrent: return 0;
  }
  return 0;
}

// ---- initialization ------------------------------------------------------

namespace {

Tensor xavier(Rng& rng, int rows, int cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

Tensor uniform(Rng& rng, int rows, int cols, double bound) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

void init_attention(std::map<std::string, Tensor>& p, Rng& rng, const std::string& prefix, int dim) {
  p[prefix + "wq"] = xavier(rng, dim, dim);
  p[prefix + "wk"] = xavier(rng, dim, dim);
  p[prefix + "wv"] = xavier(rng, dim, dim);
  p[prefix + "wo"] = xavier(rng, dim, dim);
  p[prefix + "bo"] = Tensor::Zero(1, dim);
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  Rng rng = make_rng(seed, 0x6d6f64656cULL);
  const int d = config_.embed_dim;
  const int h = config_.hidden_dim;
  auto& p = params_;
  p["embed.codes"] = uniform(rng, config_.vocab_size, d, 0.1);
  p["embed.labs"] = xavier(rng, config_.n_labs, d);
  p["embed.time"] = uniform(rng, 1, d, 0.1);
  p["embed.bias"] = Tensor::Zero(1, d);
  int readout = d;
  switch (config_.architecture) {
    case Architecture::kTransformer:
      for (int l = 0; l < config_.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        init_attention(p, rng, pre + "attn.", d);
        p[pre + "ln1.gamma"] = Tensor::Ones(1, d);
        p[pre + "ln1.beta"] = Tensor::Zero(1, d);
        p[pre + "ffn.w1"] = xavier(rng, d, h);
        p[pre + "ffn.b1"] = Tensor::Zero(1, h);
        p[pre + "ffn.w2"] = xavier(rng, h, d);
        p[pre + "ffn.b2"] = Tensor::Zero(1, d);
        p[pre + "ln2.gamma"] = Tensor::Ones(1, d);
        p[pre + "ln2.beta"] = Tensor::Zero(1, d);
      }
      break;
    case Architecture::kStageRecurrent:
    case Architecture::kStageAttn:
      p["cell.wx"] = xavier(rng, d, 3 * h);
      p["cell.bx"] = Tensor::Zero(1, 3 * h);
      p["cell.uzr"] = xavier(rng, h, 2 * h);
      p["cell.uh"] = xavier(rng, h, h);
      p["cell.log_tau"] = Tensor::Constant(1, h, std::log(7.0));  // days
      if (config_.architecture == Architecture::kStageAttn) init_attention(p, rng, "attn.", h);
      readout = h;
      break;
  }
  p["out.weight"] = xavier(rng, readout, config_.n_classes);
  p["out.bias"] = Tensor::Zero(1, config_.n_classes);
  enforce_invariants();
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("model has no parameter '" + name + "'");
  return it->second;
}

MaskPolicy Model::mask_policy(LabReplacement replacement) const {
  MaskPolicy policy;
  policy.lab_replacement = replacement;
  policy.lab_means = lab_means_.empty() ? std::vector<double>(static_cast<std::size_t>(config_.n_labs), 0.0) : lab_means_;
  return policy;
}

void Model::enforce_invariants() { params_.at("embed.codes").row(kPadCode).setZero(); }

bool operator==(const Model& a, const Model& b) {
  if (!(a.config_ == b.config_) || a.seed_ != b.seed_ || a.lab_means_ != b.lab_means_) return false;
  if (a.params_.size() != b.params_.size()) return false;
  for (auto i = a.params_.begin(), j = b.params_.begin(); i != a.params_.end(); ++i, ++j) {
    if (i->first != j->first || i->second.rows() != j->second.rows() || i->second.cols() != j->second.cols()) {
      return false;
    }
    if (i->second != j->second) return false;
  }
  return true;
}

// ---- forward -------------------------------------------------------------

namespace {

void validate_record(const ModelConfig& config, const PatientRecord& record) {
  const std::size_t length = effective_length(record);
  if (length > static_cast<std::size_t>(config.max_visits)) {
    throw InvalidArgument("record " + std::to_string(record.id) + " has " + std::to_string(length) +
                          " visits, model accepts at most " + std::to_string(config.max_visits));
  }
  for (std::size_t v = 0; v < length; ++v) {
    const Visit& visit = record.visits[v];
    for (int c : visit.codes) {
      if (c < 0 || c >= config.vocab_size) {
        throw InvalidArgument("record " + std::to_string(record.id) + ": out-of-vocabulary code index " +
                              std::to_string(c));
      }
    }
    if (visit.labs.size() != static_cast<std::size_t>(config.n_labs)) {
      throw InvalidArgument("record " + std::to_string(record.id) + ": visit " + std::to_string(v) + " has " +
                            std::to_string(visit.labs.size()) + " labs, model expects " +
                            std::to_string(config.n_labs));
    }
  }
}

class GraphBuilder {
 public:
  GraphBuilder(const Model& model, ForwardTrace& trace, ParameterMode mode)
      : model_(model), trace_(trace), tape_(trace.tape), mode_(mode) {}

  ad::Var param(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    const Tensor& value = model_.param(name);
    const ad::Var v = mode_ == ParameterMode::kTrainable ? tape_.leaf_ref(value) : tape_.constant_ref(value);
    vars_.emplace(name, v);
    if (mode_ == ParameterMode::kTrainable) trace_.parameter_leaves.emplace(name, v);
    return v;
  }

  // Multi-head self-attention over the rows of x; records each head's map.
  ad::Var self_attention(ad::Var x, const std::string& prefix) {
    const auto rows = tape_.value(x).rows();
    const auto dim = tape_.value(x).cols();
    const int heads = model_.config().n_heads;
    const auto head_dim = dim / heads;
    const ad::Var q = ad::matmul(tape_, x, param(prefix + "wq"));
    const ad::Var k = ad::matmul(tape_, x, param(prefix + "wk"));
    const ad::Var v = ad::matmul(tape_, x, param(prefix + "wv"));
    std::vector<ad::Var> outputs;
    std::vector<ad::Var> maps;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int h = 0; h < heads; ++h) {
      const auto c0 = h * head_dim;
      const ad::Var qh = ad::slice(tape_, q, 0, rows, c0, head_dim);
      const ad::Var kh = ad::slice(tape_, k, 0, rows, c0, head_dim);
      const ad::Var vh = ad::slice(tape_, v, 0, rows, c0, head_dim);
      const ad::Var scores = ad::scale(tape_, ad::matmul(tape_, qh, ad::transpose(tape_, kh)), inv_sqrt);
      const ad::Var attn = ad::softmax(tape_, scores);
      maps.push_back(attn);
      outputs.push_back(ad::matmul(tape_, attn, vh));
    }
    trace_.attention.push_back(std::move(maps));
    const ad::Var merged = ad::concat(tape_, outputs, 1);
    return ad::add(tape_, ad::matmul(tape_, merged, param(prefix + "wo")), param(prefix + "bo"));
  }

  ad::Tape& tape() { return tape_; }

 private:
  const Model& model_;
  ForwardTrace& trace_;
  ad::Tape& tape_;
  ParameterMode mode_;
  std::map<std::string, ad::Var> vars_;
};

Tensor recency_encoding(Eigen::Index visits, int dim) {
  Tensor pe(visits, dim);
  for (Eigen::Index t = 0; t < visits; ++t) {
    const double pos = static_cast<double>(visits - 1 - t);
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(t, i) = 0.5 * (i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
    }
  }
  return pe;
}

ForwardTrace run_forward(const Model& model, const PatientRecord& record, const Tensor* contributions,
                         const TraceOptions& options) {
  const ModelConfig& cfg = model.config();
  validate_record(cfg, record);
  ForwardTrace trace;
  trace.positions = feature_positions(record);
  GraphBuilder g(model, trace, options.parameters);
  ad::Tape& tape = g.tape();
  const auto n_pos = static_cast<Eigen::Index>(trace.positions.size());
  const auto visits = static_cast<Eigen::Index>(effective_length(record));
  const int d = cfg.embed_dim;

  if (contributions) {
    if (contributions->rows() != n_pos || contributions->cols() != d) {
      throw ShapeError("forward: contributions " + std::to_string(contributions->rows()) + "x" +
                       std::to_string(contributions->cols()) + " for a grid of " + std::to_string(n_pos) + "x" +
                       std::to_string(d));
    }
    trace.input = tape.leaf(*contributions);
  } else if (options.parameters == ParameterMode::kTrainable) {
    std::vector<int> code_rows(static_cast<std::size_t>(n_pos), kPadCode);
    std::vector<int> lab_rows(static_cast<std::size_t>(n_pos), 0);
    Tensor lab_values = Tensor::Zero(n_pos, d);
    for (Eigen::Index p = 0; p < n_pos; ++p) {
      const FeaturePosition& pos = trace.positions[static_cast<std::size_t>(p)];
      const Visit& visit = record.visits[static_cast<std::size_t>(pos.visit)];
      if (pos.kind == FeatureKind::kCode) {
        code_rows[static_cast<std::size_t>(p)] = visit.codes[static_cast<std::size_t>(pos.slot)];
      } else {
        lab_rows[static_cast<std::size_t>(p)] = pos.slot;
        lab_values.row(p).setConstant(visit.labs[static_cast<std::size_t>(pos.slot)]);
      }
    }
    const ad::Var codes = ad::embedding_lookup(tape, g.param("embed.codes"), code_rows);
    const ad::Var labs = ad::mul(tape, ad::embedding_lookup(tape, g.param("embed.labs"), lab_rows),
                                 tape.constant(std::move(lab_values)));
    trace.input = ad::add(tape, codes, labs);
  } else {
    trace.input = tape.leaf(input_contributions(model, record));
  }

  const Architecture arch = cfg.architecture;
  const int readout_dim = arch == Architecture::kTransformer ? d : cfg.hidden_dim;
  if (visits == 0) {
    const ad::Var zero = tape.constant(Tensor::Zero(1, readout_dim));
    trace.logits = ad::add(tape, ad::matmul(tape, zero, g.param("out.weight")), g.param("out.bias"));
    for (int l = 0; l < cfg.attention_layers(); ++l) trace.attention.emplace_back();
    return trace;
  }

  Tensor pool = Tensor::Zero(visits, n_pos);
  for (Eigen::Index p = 0; p < n_pos; ++p) pool(trace.positions[static_cast<std::size_t>(p)].visit, p) = 1.0;
  Tensor log_dt(visits, 1);
  for (Eigen::Index t = 0; t < visits; ++t) {
    log_dt(t, 0) = std::log1p(record.visits[static_cast<std::size_t>(t)].delta_t / 24.0);
  }
  ad::Var x = ad::matmul(tape, tape.constant(std::move(pool)), trace.input);
  x = ad::add(tape, x, ad::matmul(tape, tape.constant(std::move(log_dt)), g.param("embed.time")));
  x = ad::add(tape, x, g.param("embed.bias"));

  ad::Var pooled;
  if (arch == Architecture::kTransformer) {
    x = ad::add(tape, x, tape.constant(recency_encoding(visits, d)));
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      const ad::Var attn = g.self_attention(x, pre + "attn.");
      x = ad::layer_norm(tape, ad::add(tape, x, attn), g.param(pre + "ln1.gamma"), g.param(pre + "ln1.beta"));
      ad::Var ff = ad::relu(tape, ad::add(tape, ad::matmul(tape, x, g.param(pre + "ffn.w1")), g.param(pre + "ffn.b1")));
      ff = ad::add(tape, ad::matmul(tape, ff, g.param(pre + "ffn.w2")), g.param(pre + "ffn.b2"));
      x = ad::layer_norm(tape, ad::add(tape, x, ff), g.param(pre + "ln2.gamma"), g.param(pre + "ln2.beta"));
    }
    pooled = ad::mean(tape, x);
  } else {
    const Eigen::Index h = cfg.hidden_dim;
    const ad::Var xw = ad::add(tape, ad::matmul(tape, x, g.param("cell.wx")), g.param("cell.bx"));
    const ad::Var neg_inv_tau =
        ad::scale(tape, ad::exp(tape, ad::scale(tape, g.param("cell.log_tau"), -1.0)), -1.0);
    const ad::GateFlag reset{std::string(kResetGateTag), 0};
    const ad::GateFlag update{std::string(kUpdateGateTag), 0};
    ad::Var state = tape.constant(Tensor::Zero(1, h));
    std::vector<ad::Var> states;
    for (Eigen::Index t = 0; t < visits; ++t) {
      const ad::Var hu = ad::matmul(tape, state, g.param("cell.uzr"));
      const ad::Var z = ad::sigmoid(tape, ad::add(tape, ad::slice(tape, xw, t, 1, 0, h), ad::slice(tape, hu, 0, 1, 0, h)));
      const ad::Var r = ad::sigmoid(tape, ad::add(tape, ad::slice(tape, xw, t, 1, h, h), ad::slice(tape, hu, 0, 1, h, h)));
      const ad::Var rh = ad::mul(tape, r, state, &reset);
      const ad::Var cand =
          ad::tanh(tape, ad::add(tape, ad::slice(tape, xw, t, 1, 2 * h, h), ad::matmul(tape, rh, g.param("cell.uh"))));
      const double dt_days = record.visits[static_cast<std::size_t>(t)].delta_t / 24.0;
      const ad::Var decay = ad::exp(tape, ad::scale(tape, neg_inv_tau, dt_days));
      const ad::Var u = ad::mul(tape, z, decay);
      state = ad::add(tape, state, ad::mul(tape, u, ad::sub(tape, cand, state), &update));
      states.push_back(state);
    }
    if (arch == Architecture::kStageRecurrent) {
      pooled = state;
    } else {
      const ad::Var seq = ad::concat(tape, states, 0);
      pooled = ad::mean(tape, ad::add(tape, seq, g.self_attention(seq, "attn.")));
    }
  }
  if (options.dropout_mask) pooled = ad::mul(tape, pooled, tape.constant(*options.dropout_mask));
  trace.logits = ad::add(tape, ad::matmul(tape, pooled, g.param("out.weight")), g.param("out.bias"));
  return trace;
}

}  // namespace

Tensor input_contributions(const Model& model, const PatientRecord& record) {
  validate_record(model.config(), record);
  const auto positions = feature_positions(record);
  const Tensor& codes = model.param("embed.codes");
  const Tensor& labs = model.param("embed.labs");
  Tensor out(static_cast<Eigen::Index>(positions.size()), model.config().embed_dim);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    const FeaturePosition& pos = positions[p];
    const Visit& visit = record.visits[static_cast<std::size_t>(pos.visit)];
    const auto row = static_cast<Eigen::Index>(p);
    if (pos.kind == FeatureKind::kCode) {
      out.row(row) = codes.row(visit.codes[static_cast<std::size_t>(pos.slot)]);
    } else {
      out.row(row) = labs.row(pos.slot) * visit.labs[static_cast<std::size_t>(pos.slot)];
    }
  }
  return out;
}

ForwardTrace forward_traced(const Model& model, const PatientRecord& record, const TraceOptions& options) {
  return run_forward(model, record, nullptr, options);
}

ForwardTrace forward_traced(const Model& model, const PatientRecord& record, const Tensor& contributions,
                            const TraceOptions& options) {
  return run_forward(model, record, &contributions, options);
}

Eigen::VectorXd ForwardTrace::logit_values() const { return tape.value(logits).row(0).transpose(); }

Eigen::VectorXd ForwardTrace::probabilities() const {
  return ad::softmax_rows(tape.value(logits)).row(0).transpose();
}

Eigen::VectorXd predict_proba(const Model& model, const PatientRecord& record) {
  return forward_traced(model, record).probabilities();
}

int predict_class(const Model& model, const PatientRecord& record) {
  Eigen::Index best = 0;
  predict_proba(model, record).maxCoeff(&best);
  return static_cast<int>(best);
}

ad::Var target_score(ForwardTrace& trace, int target_class) {
  ad::Tape& tape = trace.tape;
  const auto classes = tape.value(trace.logits).cols();
  if (target_class < 0 || target_class >= classes) {
    throw InvalidArgument("target class " + std::to_string(target_class) + " outside [0, " +
                          std::to_string(classes) + ")");
  }
  Tensor centering = Tensor::Constant(classes, 1, -1.0 / static_cast<double>(classes));
  centering(target_class, 0) += 1.0;
  return ad::matmul(tape, trace.logits, tape.constant(std::move(centering)));
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'S', 'A', 'T', 'T', 'R', 'C', 'K'};

nlohmann::json config_json(const ModelConfig& c) {
  return {{"architecture", to_string(c.architecture)}, {"vocab_size", c.vocab_size}, {"n_labs", c.n_labs},
          {"embed_dim", c.embed_dim}, {"hidden_dim", c.hidden_dim}, {"n_heads", c.n_heads},
          {"n_layers", c.n_layers}, {"n_classes", c.n_classes}, {"max_visits", c.max_visits},
          {"dropout", c.dropout}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  c.vocab_size = j.at("vocab_size").get<int>();
  c.n_labs = j.at("n_labs").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.max_visits = j.at("max_visits").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("truncated checkpoint", 0);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw ParseError("truncated checkpoint", 0);
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, model.seed());
  put_string(out, config_json(model.config()).dump());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.lab_means().size()));
  for (double m : model.lab_means()) put<double>(out, m);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, t] : model.parameters()) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ParseError("not a checkpoint: " + path.string(), 0);
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw ParseError("unsupported checkpoint version", 0);
  const auto seed = get<std::uint64_t>(in);
  const ModelConfig config = config_from_json(nlohmann::json::parse(get_string(in)));
  Model model(config, seed);
  std::vector<double> means(get<std::uint32_t>(in));
  for (double& m : means) m = get<double>(in);
  model.set_lab_means(std::move(means));
  const auto n = get<std::uint32_t>(in);
  if (n != model.parameters().size()) throw ParseError("checkpoint parameter count mismatch", 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = get_string(in);
    auto it = model.parameters().find(name);
    if (it == model.parameters().end()) throw ParseError("unknown parameter '" + name + "'", 0);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (static_cast<Eigen::Index>(rows) != it->second.rows() || static_cast<Eigen::Index>(cols) != it->second.cols()) {
      throw ParseError("shape mismatch for parameter '" + name + "'", 0);
    }
    if (!in.read(reinterpret_cast<char*>(it->second.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)))) {
      throw ParseError("truncated checkpoint", 0);
    }
  }
  return model;
}

}  // namespace tsattr
