#pragma once

// Low-rank + sparse layer: a weight A represented by a factorized tensor L, a
// dense residual S and a binary mask M. Two reconstructions are supported:
//   additive  A = L + M (.) S
//   masking   A = (1 - M) (.) L + M (.) S
// plus the two baselines (low-rank only, sparse only).

#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "tenslim/decomposer.hpp"

namespace tenslim {

enum class ReconstructionMode { Additive, Masking, LowRankOnly, SparseOnly };

constexpr std::string_view to_string(ReconstructionMode m) {
  switch (m) {
    case ReconstructionMode::Additive: return "additive";
    case ReconstructionMode::Masking: return "masking";
    case ReconstructionMode::LowRankOnly: return "lowrank_only";
    case ReconstructionMode::SparseOnly: return "sparse_only";
  }
  return "?";
}

inline ReconstructionMode parse_mode(std::string_view name) {
  if (name == "additive") return ReconstructionMode::Additive;
  if (name == "masking") return ReconstructionMode::Masking;
  if (name == "lowrank_only") return ReconstructionMode::LowRankOnly;
  if (name == "sparse_only") return ReconstructionMode::SparseOnly;
  throw Error(Errc::ConfigError, "unknown reconstruction mode '" + std::string(name) + "'");
}

template <typename Scalar>
struct LowRankSparseLayer {
  std::string name;
  Shape original_shape;
  Shape fold_shape;
  std::optional<FactorizedTensor<Scalar>> low_rank;
  std::optional<DenseTensor<Scalar>> sparse;
  std::optional<Mask> mask;
  ReconstructionMode mode = ReconstructionMode::Additive;

  bool has_sparse() const { return sparse.has_value() && mask.has_value(); }
};

/// Checks the structural invariants of a layer (shapes agree, required parts
/// present for the mode).
template <typename Scalar>
void validate(const LowRankSparseLayer<Scalar>& layer) {
  if (numel(layer.fold_shape) != numel(layer.original_shape))
    throw Error(Errc::ShapeMismatch, layer.name + ": fold shape does not cover the original shape");
  const bool needs_lr = layer.mode != ReconstructionMode::SparseOnly;
  const bool needs_sparse = layer.mode != ReconstructionMode::LowRankOnly;
  if (needs_lr != layer.low_rank.has_value())
    throw Error(Errc::ModeMismatch, layer.name + ": low-rank part presence does not match mode");
  if (needs_sparse != layer.has_sparse() || layer.sparse.has_value() != layer.mask.has_value())
    throw Error(Errc::ModeMismatch, layer.name + ": sparse part presence does not match mode");
  if (layer.low_rank) {
    validate(*layer.low_rank);
    if (shape_of(*layer.low_rank) != layer.fold_shape)
      throw Error(Errc::ShapeMismatch, layer.name + ": low-rank shape does not match fold shape");
  }
  if (layer.sparse && (layer.sparse->shape() != layer.fold_shape || layer.mask->shape() != layer.fold_shape))
    throw Error(Errc::ShapeMismatch, layer.name + ": sparse/mask shape does not match fold shape");
}

/// Mask with ones at the ceil(fraction * numel) largest-magnitude entries.
/// Ties are broken by lower flat index.
template <typename Scalar>
Mask top_k_mask(const DenseTensor<Scalar>& a, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(Errc::ConfigError, "top-k fraction must be in [0, 1]");
  const Index n = a.numel();
  const Index keep = std::min<Index>(n, static_cast<Index>(std::ceil(fraction * static_cast<double>(n) - 1e-12)));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto before = [&](Index x, Index y) {
    const Scalar ax = std::abs(a[x]), ay = std::abs(a[y]);
    return ax != ay ? ax > ay : x < y;
  };
  std::nth_element(order.begin(), order.begin() + keep, order.end(), before);
  Mask m = Mask::Zeros(a.shape());
  for (Index i = 0; i < keep; ++i) m.bits()[order[static_cast<std::size_t>(i)]] = 1;
  return m;
}

namespace detail {
template <typename Scalar>
DenseTensor<Scalar> fold_for(const DenseTensor<Scalar>& a, const DecomposeConfig& cfg, Shape& fold_shape) {
  fold_shape = cfg.fold_shape ? *cfg.fold_shape : budget_fold_shape(a.shape(), cfg.format, cfg.budget_fraction);
  if (numel(fold_shape) != a.numel())
    throw Error(Errc::ConfigError, "fold_shape " + to_string(fold_shape) + " does not cover " + to_string(a.shape()));
  return a.reshaped(fold_shape);
}
}  // namespace detail

/// Residual initialization: L fits A by least squares, S = A - L, M = 1.
/// Ranks default to the budget rule in `cfg`.
template <typename Scalar>
LowRankSparseLayer<Scalar> init_residual(const DenseTensor<Scalar>& a, const DecomposeConfig& cfg,
                                         std::string name = {}, std::optional<RankSpec> ranks = {}) {
  cfg.validate();
  if (!a.data().allFinite()) throw Error(Errc::NonFiniteGradient, "weight " + name + " has non-finite entries");
  LowRankSparseLayer<Scalar> layer;
  layer.name = std::move(name);
  layer.original_shape = a.shape();
  const DenseTensor<Scalar> folded = detail::fold_for(a, cfg, layer.fold_shape);
  const RankSpec spec = ranks ? *ranks : budget_ranks(layer.fold_shape, cfg.format, cfg.budget_fraction, cfg.strict_budget);
  auto fit = decompose(folded, spec, cfg);
  layer.sparse = folded - reconstruct(fit.factors);
  layer.low_rank = std::move(fit.factors);
  layer.mask = Mask::Ones(layer.fold_shape);
  layer.mode = ReconstructionMode::Additive;
  return layer;
}

/// Masked initialization: the top_k_fraction largest-magnitude entries are
/// excluded from the low-rank fit and kept in S; M marks them. Kept entries of
/// S hold A itself, so the masking reconstruction reproduces A there.
template <typename Scalar>
LowRankSparseLayer<Scalar> init_masking(const DenseTensor<Scalar>& a, const DecomposeConfig& cfg,
                                        double top_k_fraction, std::string name = {},
                                        std::optional<RankSpec> ranks = {}) {
  cfg.validate();
  if (!(top_k_fraction >= 0.0 && top_k_fraction < 1.0))
    throw Error(Errc::ConfigError, "top_k_fraction must be in [0, 1)");
  if (!a.data().allFinite()) throw Error(Errc::NonFiniteGradient, "weight " + name + " has non-finite entries");
  LowRankSparseLayer<Scalar> layer;
  layer.name = std::move(name);
  layer.original_shape = a.shape();
  const DenseTensor<Scalar> folded = detail::fold_for(a, cfg, layer.fold_shape);
  const RankSpec spec = ranks ? *ranks : budget_ranks(layer.fold_shape, cfg.format, cfg.budget_fraction, cfg.strict_budget);
  Mask kept = top_k_mask(folded, top_k_fraction);
  auto fit = masked_decompose(folded, kept.complement(), spec, cfg);
  const DenseTensor<Scalar> low = reconstruct(fit.factors);
  layer.sparse = folded - hadamard(low, kept.complement());
  layer.low_rank = std::move(fit.factors);
  layer.mask = std::move(kept);
  layer.mode = ReconstructionMode::Masking;
  return layer;
}

/// Low-rank-only baseline: L from the residual fit, no sparse part.
template <typename Scalar>
LowRankSparseLayer<Scalar> init_lowrank_only(const DenseTensor<Scalar>& a, const DecomposeConfig& cfg,
                                             std::string name = {}, std::optional<RankSpec> ranks = {}) {
  LowRankSparseLayer<Scalar> layer = init_residual(a, cfg, std::move(name), std::move(ranks));
  layer.sparse.reset();
  layer.mask.reset();
  layer.mode = ReconstructionMode::LowRankOnly;
  return layer;
}

/// Sparse-only baseline: S = A with a full mask, no low-rank part.
template <typename Scalar>
LowRankSparseLayer<Scalar> init_sparse_only(const DenseTensor<Scalar>& a, std::string name = {}) {
  LowRankSparseLayer<Scalar> layer;
  layer.name = std::move(name);
  layer.original_shape = a.shape();
  layer.fold_shape = a.shape();
  layer.sparse = a;
  layer.mask = Mask::Ones(a.shape());
  layer.mode = ReconstructionMode::SparseOnly;
  return layer;
}

/// L + M (.) S, in the original weight shape.
template <typename Scalar>
DenseTensor<Scalar> reconstruct_additive(const LowRankSparseLayer<Scalar>& layer) {
  if (layer.mode != ReconstructionMode::Additive)
    throw Error(Errc::ModeMismatch, layer.name + " is not an additive layer");
  validate(layer);
  DenseTensor<Scalar> out = reconstruct(*layer.low_rank);
  out.data() += layer.sparse->data().cwiseProduct(layer.mask->template as<Scalar>());
  return out.reshaped(layer.original_shape);
}

/// (1 - M) (.) L + M (.) S, in the original weight shape. Each entry comes from
/// exactly one of the two sources.
template <typename Scalar>
DenseTensor<Scalar> reconstruct_masking(const LowRankSparseLayer<Scalar>& layer) {
  if (layer.mode != ReconstructionMode::Masking)
    throw Error(Errc::ModeMismatch, layer.name + " is not a masking layer");
  validate(layer);
  const DenseTensor<Scalar> low = reconstruct(*layer.low_rank);
  const auto& bits = layer.mask->bits();
  DenseTensor<Scalar> out(layer.fold_shape);
  for (Index i = 0; i < out.numel(); ++i) out[i] = bits[i] ? (*layer.sparse)[i] : low[i];
  return out.reshaped(layer.original_shape);
}

/// The effective weight for any mode.
template <typename Scalar>
DenseTensor<Scalar> effective_weight(const LowRankSparseLayer<Scalar>& layer) {
  switch (layer.mode) {
    case ReconstructionMode::Additive:
      return reconstruct_additive(layer);
    case ReconstructionMode::Masking:
      return reconstruct_masking(layer);
    case ReconstructionMode::LowRankOnly:
      validate(layer);
      return reconstruct(*layer.low_rank).reshaped(layer.original_shape);
    case ReconstructionMode::SparseOnly:
      validate(layer);
      return hadamard(*layer.sparse, *layer.mask).reshaped(layer.original_shape);
  }
  throw Error(Errc::ModeMismatch, "unknown mode");
}

/// param_count(L) + nnz(M): what has to be stored for this layer.
template <typename Scalar>
Index stored_params(const LowRankSparseLayer<Scalar>& layer) {
  Index total = 0;
  if (layer.low_rank) total += param_count(*layer.low_rank);
  if (layer.mask) total += layer.mask->count_ones();
  return total;
}

/// Gradients of a loss w.r.t. the stored parts of a layer.
template <typename Scalar>
struct LayerGradient {
  std::optional<FactorizedTensor<Scalar>> low_rank;
  std::optional<DenseTensor<Scalar>> sparse;
};

/// Backpropagates dLoss/dWeight (original shape) into the factors of L and the
/// entries of S. Masked entries of S always receive exactly zero.
template <typename Scalar>
LayerGradient<Scalar> backprop(const LowRankSparseLayer<Scalar>& layer, const DenseTensor<Scalar>& weight_grad) {
  if (weight_grad.shape() != layer.original_shape)
    throw Error(Errc::ShapeMismatch, layer.name + ": gradient shape does not match the weight");
  const DenseTensor<Scalar> g = weight_grad.reshaped(layer.fold_shape);
  LayerGradient<Scalar> out;
  switch (layer.mode) {
    case ReconstructionMode::Additive:
      out.low_rank = reconstruct_vjp(*layer.low_rank, g);
      out.sparse = hadamard(g, *layer.mask);
      break;
    case ReconstructionMode::Masking:
      out.low_rank = reconstruct_vjp(*layer.low_rank, hadamard(g, layer.mask->complement()));
      out.sparse = hadamard(g, *layer.mask);
      break;
    case ReconstructionMode::LowRankOnly:
      out.low_rank = reconstruct_vjp(*layer.low_rank, g);
      break;
    case ReconstructionMode::SparseOnly:
      out.sparse = hadamard(g, *layer.mask);
      break;
  }
  return out;
}

}  // namespace tenslim
