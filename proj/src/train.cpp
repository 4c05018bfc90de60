#include "tsattr/train.hpp"

#include <cmath>
#include <numeric>

#include "tsattr/error.hpp"
#include "tsattr/rng.hpp"

namespace tsattr {

TrainResult train(Model model, const Dataset& train_set, const Dataset& heldout, const TrainOptions& options) {
  if (train_set.empty()) throw InvalidArgument("train: empty dataset");
  if (options.epochs < 0 || options.batch_size < 1 || !(options.learning_rate > 0.0)) {
    throw InvalidArgument("train: invalid options");
  }
  const ModelConfig& cfg = model.config();
  for (const PatientRecord& r : train_set) {
    if (r.label < 0 || r.label >= cfg.n_classes) {
      throw InvalidArgument("train: label " + std::to_string(r.label) + " of record " + std::to_string(r.id) +
                            " outside n-classes");
    }
  }
  model.set_lab_means(lab_means(train_set, static_cast<std::size_t>(cfg.n_labs)));

  std::map<std::string, Tensor> mean_square;
  std::map<std::string, Tensor> grad_sum;
  for (const auto& [name, t] : model.parameters()) {
    mean_square[name] = Tensor::Zero(t.rows(), t.cols());
    grad_sum[name] = Tensor::Zero(t.rows(), t.cols());
  }

  Rng rng = make_rng(options.seed, 0x747261696eULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result{model, {}, {}};
  Model& m = result.model;
  const int readout = cfg.architecture == Architecture::kTransformer ? cfg.embed_dim : cfg.hidden_dim;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      for (auto& [name, g] : grad_sum) g.setZero();
      for (std::size_t b = start; b < stop; ++b) {
        const PatientRecord& rec = train_set[order[b]];
        Tensor dropout_mask;
        TraceOptions trace_options{ParameterMode::kTrainable, nullptr};
        if (cfg.dropout > 0.0) {
          dropout_mask.resize(1, readout);
          for (Eigen::Index k = 0; k < readout; ++k) {
            dropout_mask(0, k) = uniform01(rng) < cfg.dropout ? 0.0 : 1.0 / (1.0 - cfg.dropout);
          }
          trace_options.dropout_mask = &dropout_mask;
        }
        ForwardTrace trace = [&] {
          try {
            return forward_traced(m, rec, trace_options);
          } catch (const NumericError& e) {
            throw DivergenceError("train: non-finite activations at epoch " + std::to_string(epoch) + ": " + e.what());
          }
        }();
        const Eigen::VectorXd p = trace.probabilities();
        const double loss = -std::log(std::max(p(rec.label), 1e-300));
        if (!std::isfinite(loss)) throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss += loss;
        Tensor seed = p.transpose();
        seed(0, rec.label) -= 1.0;
        const ad::Gradients grads = ad::backward_seeded(trace.tape, trace.logits, seed);
        for (const auto& [name, var] : trace.parameter_leaves) {
          if (grads.has(var)) grad_sum[name] += grads.at(var);
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      double norm_sq = 0.0;
      for (auto& [name, g] : grad_sum) {
        g *= inv;
        norm_sq += g.squaredNorm();
      }
      if (!std::isfinite(norm_sq)) throw DivergenceError("train: non-finite gradient at epoch " + std::to_string(epoch));
      const double clip = std::sqrt(norm_sq) > options.clip_norm ? options.clip_norm / std::sqrt(norm_sq) : 1.0;
      for (auto& [name, param] : m.parameters()) {
        const Tensor g = grad_sum[name] * clip;
        Tensor& ms = mean_square[name];
        ms = options.rms_decay * ms + (1.0 - options.rms_decay) * g.cwiseProduct(g);
        param.array() -= options.learning_rate * g.array() / (ms.array().sqrt() + options.epsilon);
      }
      m.enforce_invariants();
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw DivergenceError("train: loss diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  if (!heldout.empty()) result.metrics = evaluate(m, heldout);
  return result;
}

EvalMetrics evaluate(const Model& model, const Dataset& dataset) {
  const int classes = model.config().n_classes;
  std::vector<double> positive;
  std::vector<int> predicted, labels;
  for (const PatientRecord& r : dataset) {
    const Eigen::VectorXd p = predict_proba(model, r);
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    predicted.push_back(static_cast<int>(best));
    labels.push_back(r.label);
    if (classes == 2) positive.push_back(p(1));
  }
  return classes == 2 ? binary_metrics(positive, predicted, labels) : multiclass_metrics(predicted, labels, classes);
}

}  // namespace tsattr
