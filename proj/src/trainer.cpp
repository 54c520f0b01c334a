#include "tenslim/trainer.hpp"

#include <numeric>
#include <random>

#include "tenslim/kd_loss.hpp"

namespace tenslim {

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"step", step},
          {"loss", loss},
          {"kd_term", kd_term},
          {"ce_term", ce_term},
          {"sparsity", sparsity},
          {"lr", lr},
          {"val_accuracy", val_accuracy},
          {"compression_ratio", compression_ratio},
          {"newly_pruned", newly_pruned},
          {"order_seed", order_seed}};
}

void sgd_step(Network& net, NetworkGradient& grad, MomentumState& state, double lr, double momentum) {
  auto params = parameters(net);
  auto grads = gradient_arrays(net, grad);
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "parameter and gradient lists differ");
  if (state.buffers.empty()) {
    for (const auto& p : params) state.buffers.push_back(Vector<double>::Zero(p.values.size()));
  }
  if (state.buffers.size() != params.size()) throw Error(Errc::ShapeMismatch, "optimizer state does not match model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const auto& g = grads[k];
    auto& v = state.buffers[k];
    if (g.size() != p.values.size() || v.size() != p.values.size())
      throw Error(Errc::ShapeMismatch, p.name + ": gradient size mismatch");
    if (!g.allFinite()) throw Error(Errc::NonFiniteGradient, "non-finite gradient for " + p.name);
    v = momentum * v + g;
    if (p.frozen) v.array() *= p.frozen->as<double>().array();
    if (lr != 0.0) p.values -= lr * v;
  }
}

std::vector<std::reference_wrapper<LowRankSparseLayer<double>>> sparse_layers(Network& net) {
  std::vector<std::reference_wrapper<LowRankSparseLayer<double>>> out;
  for (Op& op : net.ops)
    if (op.has_weight() && op.is_lrs()) {
      auto& layer = std::get<LowRankSparseLayer<double>>(op.weight);
      if (layer.has_sparse()) out.emplace_back(layer);
    }
  return out;
}

double compression_ratio(const Network& net) {
  Index total = 0, stored = 0;
  for (const Op& op : net.ops) {
    if (!op.has_weight()) continue;
    const Index n = numel(op.weight_shape());
    total += n;
    stored += op.is_lrs() ? stored_params(std::get<LowRankSparseLayer<double>>(op.weight)) : n;
  }
  return stored ? static_cast<double>(total) / static_cast<double>(stored) : 0.0;
}

namespace {

Matrix<double> gather(const Matrix<double>& x, std::span<const Index> idx) {
  Matrix<double> out(x.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = x.col(idx[j]);
  return out;
}

}  // namespace

TrainResult finetune(Network& student, const Network* teacher, const Dataset& data, const TrainOptions& opts) {
  data.validate();
  student.validate();
  const DistillSettings& d = opts.distill;
  if (d.epochs < 1 || d.batch_size < 1) throw Error(Errc::ConfigError, "epochs and batch_size must be >= 1");
  const double alpha = teacher ? d.alpha : 1.0;

  // The teacher is frozen, so its logits on the training set are computed once.
  Matrix<double> teacher_logits;
  if (teacher && alpha < 1.0) {
    teacher->validate();
    teacher_logits = forward(*teacher, data.train_x);
    if (teacher_logits.rows() != student.classes) throw Error(Errc::ShapeMismatch, "teacher and student class counts differ");
  }

  TrainResult result;
  double lr = opts.optimizer.lr;
  const Index n = data.train_x.cols();
  std::vector<Index> order(static_cast<std::size_t>(n));
  Index step = 0;
  auto layers = sparse_layers(student);
  const auto sparse_span = std::span<const std::reference_wrapper<LowRankSparseLayer<double>>>(layers);

  for (Index epoch = 1; epoch <= d.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;

    if (!layers.empty()) {
      const double target = schedule_sparsity(epoch, d.epochs, opts.final_sparsity);
      const PruneResult now = pooled_sparsity(sparse_span);
      const Index wanted = static_cast<Index>(std::llround(target * static_cast<double>(now.pooled)));
      if (wanted > now.masked) {
        rec.newly_pruned = global_magnitude_prune(sparse_span, target).newly_masked;
        // Velocities of newly masked entries are dropped with them.
        if (!result.momentum.buffers.empty()) {
          auto params = parameters(student);
          for (std::size_t k = 0; k < params.size(); ++k)
            if (params[k].frozen) result.momentum.buffers[k].array() *= params[k].frozen->as<double>().array();
        }
      }
    }

    rec.order_seed = derive_seed(opts.seed, "data-order/" + std::to_string(epoch));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(rec.order_seed);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0, ce_sum = 0, kd_sum = 0;
    Index batches = 0;
    for (Index start = 0; start < n; start += d.batch_size) {
      const Index count = std::min<Index>(d.batch_size, n - start);
      const std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(count));
      const Matrix<double> x = gather(data.train_x, idx);
      std::vector<Index> labels;
      for (Index i : idx) labels.push_back(data.train_y[static_cast<std::size_t>(i)]);
      const Matrix<double> t = teacher_logits.size() ? gather(teacher_logits, idx) : Matrix<double>();

      ForwardCache cache;
      const Matrix<double> logits = forward(student, x, &cache);
      Matrix<double> dlogits;
      const KdTerms terms = kd_loss_batch(logits, t.size() ? t : logits, labels, alpha, d.temperature, &dlogits);
      NetworkGradient grad = backward(student, cache, dlogits);
      sgd_step(student, grad, result.momentum, lr, opts.optimizer.momentum);
      ++step;
      loss_sum += terms.loss;
      ce_sum += alpha * terms.ce;
      kd_sum += alpha < 1.0 ? (1.0 - alpha) * d.temperature * d.temperature * terms.kl : 0.0;
      ++batches;
    }
    if (!std::isfinite(loss_sum)) throw Error(Errc::NonFiniteLogits, "loss diverged in epoch " + std::to_string(epoch));

    rec.step = step;
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.ce_term = ce_sum / static_cast<double>(batches);
    rec.kd_term = kd_sum / static_cast<double>(batches);
    rec.sparsity = layers.empty() ? 0.0 : pooled_sparsity(sparse_span).sparsity();
    rec.val_accuracy = data.val_x.cols() ? accuracy(student, data.val_x, data.val_y) : 0.0;
    rec.compression_ratio = compression_ratio(student);
    if (epoch % opts.optimizer.decay_every_epochs == 0) lr *= opts.optimizer.decay_factor;
    result.log.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  result.final_lr = lr;
  return result;
}

}  // namespace tenslim
