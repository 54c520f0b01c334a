#pragma once

// Fine-tuning with distillation, momentum SGD, step lr decay and global
// magnitude pruning once per epoch.

#include <functional>

#include <json.hpp>

#include "tenslim/config.hpp"
#include "tenslim/dataset.hpp"
#include "tenslim/model.hpp"
#include "tenslim/pruner.hpp"

namespace tenslim {

struct EpochRecord {
  Index epoch = 0;
  Index step = 0;  // optimizer steps taken so far
  double loss = 0.0;
  double kd_term = 0.0;  // (1 - alpha) T^2 KL, batch-averaged
  double ce_term = 0.0;  // alpha CE, batch-averaged
  double sparsity = 0.0;  // pooled fraction of masked S entries
  double lr = 0.0;       // rate used during this epoch
  double val_accuracy = 0.0;
  double compression_ratio = 1.0;
  Index newly_pruned = 0;
  std::uint64_t order_seed = 0;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  DistillSettings distill;
  OptimizerSettings optimizer;
  double final_sparsity = 0.0;
  std::uint64_t seed = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct MomentumState {
  std::vector<Vector<double>> buffers;  // aligned with parameters()
};

struct TrainResult {
  std::vector<EpochRecord> log;
  MomentumState momentum;
  double final_lr = 0.0;
};

/// One momentum-SGD step: v = mu v + g; p -= lr v. S entries whose mask is 0
/// keep their value and a zero velocity.
void sgd_step(Network& net, NetworkGradient& grad, MomentumState& state, double lr, double momentum);

/// Layers of `net` that hold a sparse part, in stage order.
std::vector<std::reference_wrapper<LowRankSparseLayer<double>>> sparse_layers(Network& net);

/// Trains `student` against the frozen `teacher`. With no teacher the loss is
/// plain cross-entropy. Per epoch t of e: prune to s_f (t/e)^3 when that
/// exceeds the current sparsity, train one shuffled pass, decay lr on schedule,
/// evaluate on the validation split.
TrainResult finetune(Network& student, const Network* teacher, const Dataset& data, const TrainOptions& opts);

/// Compression ratio of a network: total weight elements over stored values.
double compression_ratio(const Network& net);

}  // namespace tenslim
