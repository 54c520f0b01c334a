#pragma once

// Whole-network compression flows and the baselines.

#include "tenslim/analysis.hpp"
#include "tenslim/config.hpp"
#include "tenslim/model.hpp"

namespace tenslim {

/// Worker cap: TENSLIM_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
unsigned worker_count();

/// Builds one low-rank + sparse layer from a dense weight with the given settings.
LowRankSparseLayer<double> compress_weight(const DenseTensor<double>& w, const std::string& name,
                                           const LayerSettings& settings, const PipelineConfig& cfg);

/// Replaces every compressible dense weight (not skipped by config) by its
/// compressed layer. Layers are processed in parallel; results do not depend
/// on the worker count.
Network compress_network(const Network& dense, const PipelineConfig& cfg, unsigned workers = 0);

/// Sparse-only baseline: every compressible weight becomes S = W, M = 1.
Network sparse_only_network(const Network& dense, const PipelineConfig& cfg);

/// Low-rank-only baseline at the configured budget.
Network lowrank_only_network(const Network& dense, const PipelineConfig& cfg, unsigned workers = 0);

/// One row per weighted stage (dense stages report ratio 1). With a dense
/// `reference`, Err of each L is measured against the matching original weight
/// instead of the layer's own effective weight.
CompressionReport network_report(const Network& net, const Network* reference = nullptr);

}  // namespace tenslim
