#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tsattr/metrics.hpp"
#include "tsattr/model.hpp"

namespace tsattr {

/// RMSProp (adaptive per-parameter step, no momentum) on softmax cross-entropy.
struct TrainOptions {
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double rms_decay = 0.9;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  Model model;
  EvalMetrics metrics;
  std::vector<double> epoch_loss;
};

/// Trains `model` in place order-deterministically; metrics are on `heldout`.
TrainResult train(Model model, const Dataset& train_set, const Dataset& heldout, const TrainOptions& options);

EvalMetrics evaluate(const Model& model, const Dataset& dataset);

}  // namespace tsattr
