#pragma once

// Global magnitude pruning of the sparse residuals with a cubic schedule.

#include <cmath>
#include <functional>
#include <span>

#include "tenslim/lrs.hpp"

namespace tenslim {

/// s_t = s_f (t / n)^3.
inline double schedule_sparsity(Index t, Index n, double final_sparsity) {
  if (n < 1) throw Error(Errc::InvalidStep, "schedule horizon must be >= 1");
  if (t < 0 || t > n) throw Error(Errc::InvalidStep, "step " + std::to_string(t) + " outside [0, " + std::to_string(n) + "]");
  if (t == n) return final_sparsity;
  const double ratio = static_cast<double>(t) / static_cast<double>(n);
  return final_sparsity * ratio * ratio * ratio;
}

struct PruneSchedule {
  double final_sparsity = 0.0;
  Index total_steps = 1;
  Index current_step = 0;

  void validate() const {
    if (!(final_sparsity >= 0.0 && final_sparsity < 1.0))
      throw Error(Errc::ConfigError, "target sparsity must be in [0, 1)");
    if (total_steps < 1) throw Error(Errc::ConfigError, "schedule horizon must be >= 1");
    if (current_step < 0 || current_step > total_steps) throw Error(Errc::InvalidStep, "schedule step out of range");
  }

  double sparsity() const { return schedule_sparsity(current_step, total_steps, final_sparsity); }
  double advance() {
    if (current_step >= total_steps) throw Error(Errc::InvalidStep, "schedule already finished");
    ++current_step;
    return sparsity();
  }
};

struct PruneResult {
  Index pooled = 0;        // S entries across all participating layers
  Index masked = 0;        // of which masked after this event
  Index newly_masked = 0;
  double sparsity() const { return pooled ? static_cast<double>(masked) / static_cast<double>(pooled) : 0.0; }
};

/// Fraction of masked S entries pooled over every layer that has a sparse part.
template <typename Scalar>
PruneResult pooled_sparsity(std::span<const std::reference_wrapper<LowRankSparseLayer<Scalar>>> layers) {
  PruneResult r;
  for (const auto& ref : layers) {
    const auto& layer = ref.get();
    if (!layer.has_sparse()) continue;
    r.pooled += layer.mask->numel();
    r.masked += layer.mask->numel() - layer.mask->count_ones();
  }
  return r;
}

/// Raises the pooled sparsity of all sparse residuals to `target` with a single
/// magnitude threshold. Masked entries stay masked and are zeroed in S. The
/// target count is round(target * pooled); ties go to the earlier layer, then
/// the lower flat index. Throws ScheduleRegression when the target lies below
/// the current sparsity.
template <typename Scalar>
PruneResult global_magnitude_prune(std::span<const std::reference_wrapper<LowRankSparseLayer<Scalar>>> layers,
                                   double target) {
  if (!(target >= 0.0 && target <= 1.0)) throw Error(Errc::InvalidStep, "target sparsity must be in [0, 1]");
  PruneResult result = pooled_sparsity<Scalar>(layers);
  const Index wanted = static_cast<Index>(std::llround(target * static_cast<double>(result.pooled)));
  if (wanted < result.masked)
    throw Error(Errc::ScheduleRegression, "target sparsity " + std::to_string(target) + " is below the current " +
                                              std::to_string(result.sparsity()));
  const Index extra = wanted - result.masked;
  if (extra == 0) return result;

  struct Candidate {
    Scalar magnitude;
    std::size_t layer;
    Index flat;
  };
  std::vector<Candidate> pool;
  pool.reserve(static_cast<std::size_t>(result.pooled - result.masked));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l].get();
    if (!layer.has_sparse()) continue;
    const auto& bits = layer.mask->bits();
    for (Index i = 0; i < bits.size(); ++i)
      if (bits[i]) pool.push_back({std::abs((*layer.sparse)[i]), l, i});
  }
  auto smaller = [](const Candidate& x, const Candidate& y) {
    if (x.magnitude != y.magnitude) return x.magnitude < y.magnitude;
    if (x.layer != y.layer) return x.layer < y.layer;
    return x.flat < y.flat;
  };
  std::nth_element(pool.begin(), pool.begin() + (extra - 1), pool.end(), smaller);
  for (Index k = 0; k < extra; ++k) {
    const Candidate& c = pool[static_cast<std::size_t>(k)];
    auto& layer = layers[c.layer].get();
    layer.mask->bits()[c.flat] = 0;
    (*layer.sparse)[c.flat] = Scalar(0);
  }
  result.masked = wanted;
  result.newly_masked = extra;
  return result;
}

template <typename Scalar>
PruneResult global_magnitude_prune(std::vector<std::reference_wrapper<LowRankSparseLayer<Scalar>>>& layers,
                                   double target) {
  return global_magnitude_prune<Scalar>(
      std::span<const std::reference_wrapper<LowRankSparseLayer<Scalar>>>(layers.data(), layers.size()), target);
}

}  // namespace tenslim
