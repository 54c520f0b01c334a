#include "tenslim/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace tenslim {

unsigned worker_count() {
  if (const char* env = std::getenv("TENSLIM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

LowRankSparseLayer<double> compress_weight(const DenseTensor<double>& w, const std::string& name,
                                           const LayerSettings& settings, const PipelineConfig& cfg) {
  const DecomposeConfig dc = cfg.decompose_config(name);
  if (settings.mode == ReconstructionMode::SparseOnly) return init_sparse_only(w, name);
  if (settings.mode == ReconstructionMode::LowRankOnly) return init_lowrank_only(w, dc, name);

  LowRankSparseLayer<double> layer = settings.init == InitScheme::Masking ? init_masking(w, dc, cfg.top_k_for(settings), name)
                                                                          : init_residual(w, dc, name);
  if (layer.mode != settings.mode) {
    // Cross pairing: recompute S so the chosen reconstruction reproduces W
    // wherever M = 1.
    const DenseTensor<double> folded = w.reshaped(layer.fold_shape);
    const DenseTensor<double> low = reconstruct(*layer.low_rank);
    layer.sparse = settings.mode == ReconstructionMode::Additive ? folded - low
                                                                 : folded - hadamard(low, layer.mask->complement());
    layer.mode = settings.mode;
  }
  return layer;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  if (workers == 0) workers = worker_count();
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

Network transform(const Network& dense, const PipelineConfig& cfg, unsigned workers,
                  const std::function<std::optional<LayerSettings>(const Op&)>& settings_for) {
  cfg.validate();
  dense.validate();
  Network out = dense;
  std::vector<std::size_t> targets;
  std::vector<LayerSettings> settings;
  for (std::size_t s = 0; s < out.ops.size(); ++s) {
    const Op& op = out.ops[s];
    if (!op.has_weight() || !op.compressible || op.is_lrs()) continue;
    if (auto st = settings_for(op)) {
      targets.push_back(s);
      settings.push_back(*st);
    }
  }
  std::vector<LowRankSparseLayer<double>> layers(targets.size());
  parallel_for(targets.size(), workers, [&](std::size_t k) {
    const Op& op = out.ops[targets[k]];
    layers[k] = compress_weight(std::get<DenseTensor<double>>(op.weight), op.name, settings[k], cfg);
  });
  for (std::size_t k = 0; k < targets.size(); ++k) out.ops[targets[k]].weight = std::move(layers[k]);
  out.validate();
  return out;
}

}  // namespace

Network compress_network(const Network& dense, const PipelineConfig& cfg, unsigned workers) {
  return transform(dense, cfg, workers, [&](const Op& op) -> std::optional<LayerSettings> {
    LayerSettings s = cfg.layer(op.name);
    if (s.skip) return std::nullopt;
    return s;
  });
}

Network sparse_only_network(const Network& dense, const PipelineConfig& cfg) {
  return transform(dense, cfg, 1, [&](const Op& op) -> std::optional<LayerSettings> {
    LayerSettings s = cfg.layer(op.name);
    if (s.skip) return std::nullopt;
    s.mode = ReconstructionMode::SparseOnly;
    return s;
  });
}

Network lowrank_only_network(const Network& dense, const PipelineConfig& cfg, unsigned workers) {
  return transform(dense, cfg, workers, [&](const Op& op) -> std::optional<LayerSettings> {
    LayerSettings s = cfg.layer(op.name);
    if (s.skip) return std::nullopt;
    s.mode = ReconstructionMode::LowRankOnly;
    return s;
  });
}

CompressionReport network_report(const Network& net, const Network* reference) {
  CompressionReport report;
  for (const Op& op : net.ops) {
    if (!op.has_weight()) continue;
    if (op.is_lrs()) {
      const auto& layer = std::get<LowRankSparseLayer<double>>(op.weight);
      CompressionRow row = compression_row(layer);
      const Op* orig = reference ? reference->find(op.name) : nullptr;
      if (orig && orig->has_weight() && !orig->is_lrs() && layer.low_rank) {
        const auto& w = std::get<DenseTensor<double>>(orig->weight);
        row.err = frobenius_norm(w) > 0.0 ? relative_error(w.reshaped(layer.fold_shape), *layer.low_rank) : 0.0;
      }
      report.rows.push_back(row);
    } else {
      report.rows.push_back(dense_row(op.name, numel(op.weight_shape())));
    }
  }
  return report;
}

}  // namespace tenslim
