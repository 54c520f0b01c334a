#pragma once

// Fitting factorized tensors to dense targets: CP-ALS, truncated HOSVD,
// TT-SVD, TTM through TT-SVD on the paired-index folding, masked fits by
// iterative imputation, and rank selection under a parameter budget.

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "tenslim/formats.hpp"

namespace tenslim {

struct DecomposeConfig {
  Format format = Format::TT;
  double budget_fraction = 0.10;
  int max_als_iters = 100;
  double als_tol = 1e-6;
  double ridge = 1e-10;
  int masked_iters = 10;
  std::optional<Shape> fold_shape;
  std::uint64_t seed = 0;
  bool strict_budget = false;

  void validate() const {
    if (!(budget_fraction > 0.0 && budget_fraction <= 1.0))
      throw Error(Errc::ConfigError, "budget_fraction must be in (0, 1]");
    if (max_als_iters < 1) throw Error(Errc::ConfigError, "max_als_iters must be >= 1");
    if (!(als_tol >= 0.0)) throw Error(Errc::ConfigError, "als_tol must be >= 0");
    if (masked_iters < 0) throw Error(Errc::ConfigError, "masked_iters must be >= 0");
  }
};

/// Ranks per format: {R} for CP, (R_1..R_d) for Tucker, (R_0..R_d) for TT/TTM.
struct RankSpec {
  Format format = Format::TT;
  Shape ranks;
  bool clamped_to_one = false;
};

struct DecomposeReport {
  double relative_error = 0.0;
  int sweeps = 0;
  std::vector<double> error_history;
  bool singular_update = false;
  bool rank_clamped = false;
  bool empty_support = false;
};

template <typename Factors>
struct Fitted {
  Factors factors;
  DecomposeReport report;
};

// ---------------------------------------------------------------------------
// Fold shapes
// ---------------------------------------------------------------------------

/// Two factors a <= b of n with a as close to sqrt(n) as possible.
inline std::pair<Index, Index> balanced_split(Index n) {
  Index a = static_cast<Index>(std::floor(std::sqrt(static_cast<double>(n))));
  while (a > 1 && n % a != 0) --a;
  return {a, n / a};
}

/// Default folding of a weight: each mode is split into its most balanced
/// factor pair (prime modes stay whole). For TTM the weight is viewed as
/// shape[0] x rest and folded to (I_1, I_2, J_1, J_2).
inline Shape default_fold_shape(const Shape& weight_shape, Format format) {
  validate_shape(weight_shape);
  if (format == Format::TTM) {
    const Index rows = weight_shape.front();
    const Index cols = numel(weight_shape) / rows;
    auto [r1, r2] = balanced_split(rows);
    auto [c1, c2] = balanced_split(cols);
    return Shape{r1, r2, c1, c2};
  }
  Shape out;
  for (Index dim : weight_shape) {
    if (dim == 1) continue;
    auto [a, b] = balanced_split(dim);
    if (a > 1) out.push_back(a);
    out.push_back(b);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// ---------------------------------------------------------------------------
// Rank budget
// ---------------------------------------------------------------------------

namespace detail {

inline Shape prime_factors(Index n) {
  Shape out;
  for (Index p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  if (n > 1) out.push_back(n);
  return out;
}

/// n as a product of `parts` factors (some possibly 1), largest primes placed
/// first into the currently smallest bin. Sorted descending.
inline Shape split_into(Index n, std::size_t parts) {
  Shape primes = prime_factors(n);
  std::sort(primes.rbegin(), primes.rend());
  Shape bins(parts, 1);
  for (Index p : primes) *std::min_element(bins.begin(), bins.end()) *= p;
  std::sort(bins.rbegin(), bins.rend());
  return bins;
}

inline Shape tt_chain(const Shape& dims, Index rank) {
  const std::size_t d = dims.size();
  Shape chain(d + 1, 1);
  for (std::size_t k = 1; k < d; ++k) {
    Index left = 1, right = 1;
    for (std::size_t m = 0; m < k; ++m) left *= dims[m];
    for (std::size_t m = k; m < d; ++m) right *= dims[m];
    chain[k] = std::min({rank, left, right});
  }
  return chain;
}

inline Index tt_count(const Shape& dims, const Shape& chain) {
  Index total = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) total += chain[k] * dims[k] * chain[k + 1];
  return total;
}

inline Shape merged_ttm_dims(const Shape& paired_shape) {
  if (paired_shape.size() % 2 != 0)
    throw Error(Errc::ShapeMismatch, "TTM fold shape must have even order, got " + to_string(paired_shape));
  const std::size_t d = paired_shape.size() / 2;
  Shape merged;
  for (std::size_t k = 0; k < d; ++k) merged.push_back(paired_shape[k] * paired_shape[d + k]);
  return merged;
}

}  // namespace detail

/// Exact parameter count of a factorization of `shape` with the given ranks.
inline Index rank_param_count(const Shape& shape, const RankSpec& spec) {
  switch (spec.format) {
    case Format::CP: {
      Index sum = 0;
      for (Index dim : shape) sum += dim;
      return spec.ranks.at(0) * sum;
    }
    case Format::Tucker: {
      Index total = numel(spec.ranks);
      for (std::size_t n = 0; n < shape.size(); ++n) total += shape[n] * spec.ranks.at(n);
      return total;
    }
    case Format::TT:
      return detail::tt_count(shape, spec.ranks);
    case Format::TTM:
      return detail::tt_count(detail::merged_ttm_dims(shape), spec.ranks);
  }
  return 0;
}

/// Uniform ranks for `format` on a tensor of `shape`, by enumeration: the
/// largest R whose exact parameter count stays within budget_fraction * numel.
/// Tucker ranks are capped at the mode sizes and TT/TTM interior ranks at the
/// unfolding bounds. Falls back to rank 1 (flagged) unless `strict`.
inline RankSpec budget_ranks(const Shape& shape, Format format, double budget_fraction, bool strict = false) {
  validate_shape(shape);
  if (!(budget_fraction > 0.0)) throw Error(Errc::ConfigError, "budget_fraction must be positive");
  const double budget = budget_fraction * static_cast<double>(numel(shape));

  auto spec_for = [&](Index r) {
    RankSpec spec{format, {}, false};
    switch (format) {
      case Format::CP:
        spec.ranks = {r};
        break;
      case Format::Tucker:
        for (Index dim : shape) spec.ranks.push_back(std::min(r, dim));
        break;
      case Format::TT:
        spec.ranks = detail::tt_chain(shape, r);
        break;
      case Format::TTM:
        spec.ranks = detail::tt_chain(detail::merged_ttm_dims(shape), r);
        break;
    }
    return spec;
  };

  RankSpec best = spec_for(1);
  if (static_cast<double>(rank_param_count(shape, best)) > budget) {
    if (strict)
      throw Error(Errc::BudgetInfeasible, "rank 1 " + std::string(to_string(format)) + " exceeds the budget for " +
                                              to_string(shape));
    best.clamped_to_one = true;
    return best;
  }
  for (Index r = 2;; ++r) {
    RankSpec next = spec_for(r);
    if (next.ranks == best.ranks) break;  // every rank hit its cap
    if (static_cast<double>(rank_param_count(shape, next)) > budget) break;
    best = std::move(next);
  }
  return best;
}

/// The default fold, refined until rank 1 fits the budget when it does not
/// already: TTM gets more row/column pairs, other formats split every mode
/// into its prime factors. Returns the default fold if nothing fits.
inline Shape budget_fold_shape(const Shape& weight_shape, Format format, double budget_fraction) {
  const Shape base = default_fold_shape(weight_shape, format);
  auto fits = [&](const Shape& fold) { return !budget_ranks(fold, format, budget_fraction).clamped_to_one; };
  if (fits(base)) return base;
  if (format == Format::TTM) {
    const Index rows = weight_shape.front();
    const Index cols = numel(weight_shape) / rows;
    const std::size_t most = std::max(detail::prime_factors(rows).size(), detail::prime_factors(cols).size());
    for (std::size_t d = 3; d <= most; ++d) {
      const Shape fold = concat(detail::split_into(rows, d), detail::split_into(cols, d));
      if (fits(fold)) return fold;
    }
    return base;
  }
  Shape fine;
  for (Index dim : weight_shape)
    for (Index p : detail::prime_factors(dim)) fine.push_back(p);
  if (fine.empty()) fine.push_back(1);
  return fits(fine) ? fine : base;
}

// ---------------------------------------------------------------------------
// CP-ALS
// ---------------------------------------------------------------------------

struct CpAlsOptions {
  int max_iters = 100;
  double tol = 1e-6;
  double ridge = 1e-10;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename Scalar>
Scalar relative_residual(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& approx, Scalar norm_a) {
  const Scalar r = (a.data() - approx.data()).norm();
  return norm_a > Scalar(0) ? r / norm_a : r;
}

template <typename Scalar>
Matrix<Scalar> leading_left_vectors(const Matrix<Scalar>& m, Index count) {
  Eigen::BDCSVD<Matrix<Scalar>> svd(m, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(std::min(count, svd.matrixU().cols()));
}

// Moves column norms so every factor of a component carries the same norm.
template <typename Scalar>
void balance_columns(std::vector<Matrix<Scalar>>& factors) {
  const Index rank = factors.front().cols();
  const Scalar d = static_cast<Scalar>(factors.size());
  for (Index r = 0; r < rank; ++r) {
    Scalar log_sum = 0;
    bool zero = false;
    for (const auto& u : factors) {
      const Scalar n = u.col(r).norm();
      if (n == Scalar(0)) zero = true;
      else log_sum += std::log(n);
    }
    if (zero) continue;
    const Scalar target = std::exp(log_sum / d);
    for (auto& u : factors) u.col(r) *= target / u.col(r).norm();
  }
}

}  // namespace detail

/// Rank-R CP fit by alternating least squares. Initialized from the leading
/// singular vectors of each unfolding (seeded Gaussian columns beyond I_n), or
/// from `init` when given. The relative error after every sweep is recorded.
template <typename Scalar>
Fitted<CPFactors<Scalar>> cp_als(const DenseTensor<Scalar>& a, Index rank, const CpAlsOptions& opts = {},
                                 const CPFactors<Scalar>* init = nullptr) {
  if (rank < 1) throw Error(Errc::ShapeMismatch, "CP rank must be >= 1");
  const std::size_t d = a.shape().size();
  Fitted<CPFactors<Scalar>> out;
  const Scalar norm_a = frobenius_norm(a);
  if (norm_a == Scalar(0)) {
    for (Index dim : a.shape()) out.factors.factors.push_back(Matrix<Scalar>::Zero(dim, rank));
    return out;
  }

  std::vector<Matrix<Scalar>> unfolded;
  for (std::size_t n = 0; n < d; ++n) unfolded.push_back(unfold(a, static_cast<Index>(n)));

  auto& factors = out.factors.factors;
  if (init && init->rank() == rank && init->shape() == a.shape()) {
    factors = init->factors;
  } else {
    std::mt19937_64 rng(opts.seed);
    for (std::size_t n = 0; n < d; ++n) {
      Matrix<Scalar> u = random_normal_matrix<Scalar>(a.shape()[n], rank, rng);
      Matrix<Scalar> lead = detail::leading_left_vectors(unfolded[n], rank);
      u.leftCols(lead.cols()) = lead;
      factors.push_back(std::move(u));
    }
  }

  if (d == 1) {
    // A vector: the least-squares fit puts a in one column.
    factors[0].setZero();
    factors[0].col(0) = a.data();
    out.report.error_history.push_back(0);
    out.report.sweeps = 1;
    return out;
  }

  Scalar previous = std::numeric_limits<Scalar>::infinity();
  for (int sweep = 1; sweep <= opts.max_iters; ++sweep) {
    for (std::size_t n = 0; n < d; ++n) {
      Matrix<Scalar> gram = Matrix<Scalar>::Ones(rank, rank);
      for (std::size_t m = 0; m < d; ++m)
        if (m != n) gram.array() *= (factors[m].transpose() * factors[m]).array();
      gram.diagonal().array() += static_cast<Scalar>(opts.ridge);
      const Matrix<Scalar> rhs = unfolded[n] * detail::khatri_rao_except(factors, n);
      Eigen::LDLT<Matrix<Scalar>> ldlt(gram);
      if (ldlt.info() != Eigen::Success || ldlt.rcond() < std::numeric_limits<Scalar>::epsilon())
        out.report.singular_update = true;
      factors[n] = ldlt.solve(rhs.transpose()).transpose();
    }
    detail::balance_columns(factors);
    const Scalar err = detail::relative_residual(a, reconstruct(out.factors), norm_a);
    out.report.error_history.push_back(static_cast<double>(err));
    out.report.sweeps = sweep;
    if (err < Scalar(1e-15)) break;
    if (std::isfinite(previous) && previous - err <= static_cast<Scalar>(opts.tol) * previous) break;
    previous = err;
  }
  out.report.relative_error = out.report.error_history.back();
  return out;
}

// ---------------------------------------------------------------------------
// SVD-based fits
// ---------------------------------------------------------------------------

/// Truncated HOSVD. Ranks above the mode sizes are clamped (flagged).
template <typename Scalar>
Fitted<TuckerFactors<Scalar>> tucker_hosvd(const DenseTensor<Scalar>& a, const Shape& ranks) {
  const std::size_t d = a.shape().size();
  if (ranks.size() != d) throw Error(Errc::ShapeMismatch, "Tucker needs one rank per mode");
  Fitted<TuckerFactors<Scalar>> out;
  DenseTensor<Scalar> core = a;
  for (std::size_t n = 0; n < d; ++n) {
    if (ranks[n] < 1) throw Error(Errc::ShapeMismatch, "Tucker ranks must be >= 1");
    Index r = ranks[n];
    if (r > a.shape()[n]) {
      r = a.shape()[n];
      out.report.rank_clamped = true;
    }
    Matrix<Scalar> u = detail::leading_left_vectors(unfold(a, static_cast<Index>(n)), r);
    if (u.cols() < r) {  // rank-deficient unfolding: pad with zeros
      Matrix<Scalar> padded = Matrix<Scalar>::Zero(u.rows(), r);
      padded.leftCols(u.cols()) = u;
      u = std::move(padded);
    }
    core = detail::mode_product_keep(core, u.transpose(), static_cast<Index>(n));
    out.factors.factors.push_back(std::move(u));
  }
  out.factors.core = std::move(core);
  out.report.relative_error =
      static_cast<double>(detail::relative_residual(a, reconstruct(out.factors), frobenius_norm(a)));
  out.report.sweeps = 1;
  return out;
}

/// TT-SVD: d-1 sequential truncated SVDs of the running remainder. `ranks`
/// is the full chain (R_0..R_d); interior ranks above the unfolding bound are
/// clamped (flagged).
template <typename Scalar>
Fitted<TTCores<Scalar>> tt_svd(const DenseTensor<Scalar>& a, const Shape& ranks) {
  const Shape& dims = a.shape();
  const std::size_t d = dims.size();
  if (ranks.size() != d + 1 || ranks.front() != 1 || ranks.back() != 1)
    throw Error(Errc::RankChainBroken, "TT rank chain must have d+1 entries with R_0 = R_d = 1");
  Fitted<TTCores<Scalar>> out;
  RowMatrix<Scalar> remainder = a.as_matrix(1, a.numel());
  Index left_rank = 1;
  for (std::size_t k = 0; k + 1 < d; ++k) {
    const Index rows = left_rank * dims[k];
    const Index cols = remainder.size() / rows;
    RowMatrix<Scalar> c = Eigen::Map<RowMatrix<Scalar>>(remainder.data(), rows, cols);
    if (ranks[k + 1] < 1) throw Error(Errc::RankChainBroken, "TT ranks must be >= 1");
    Index r = ranks[k + 1];
    if (r > std::min(rows, cols)) {
      r = std::min(rows, cols);
      out.report.rank_clamped = true;
    }
    Eigen::BDCSVD<Matrix<Scalar>> svd(Matrix<Scalar>(c), Eigen::ComputeThinU | Eigen::ComputeThinV);
    RowMatrix<Scalar> u = svd.matrixU().leftCols(r);
    out.factors.cores.emplace_back(Shape{left_rank, dims[k], r}, Eigen::Map<const Vector<Scalar>>(u.data(), u.size()));
    remainder = svd.singularValues().head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose();
    left_rank = r;
  }
  out.factors.cores.emplace_back(Shape{left_rank, dims[d - 1], 1},
                                 Eigen::Map<const Vector<Scalar>>(remainder.data(), remainder.size()));
  out.report.relative_error =
      static_cast<double>(detail::relative_residual(a, reconstruct(out.factors), frobenius_norm(a)));
  out.report.sweeps = 1;
  return out;
}

/// TTM fit of a matrix (or its paired-index folding): fold to
/// (I_1..I_d, J_1..J_d), interleave to (I_1, J_1, ..., I_d, J_d), merge each
/// pair, run TT-SVD and split the cores back to order 4.
template <typename Scalar>
Fitted<TTMCores<Scalar>> ttm_decompose(const DenseTensor<Scalar>& w, const Shape& row_dims, const Shape& col_dims,
                                       const Shape& ranks) {
  if (row_dims.size() != col_dims.size() || row_dims.empty())
    throw Error(Errc::ShapeMismatch, "TTM needs equally many row and column factors");
  const std::size_t d = row_dims.size();
  DenseTensor<Scalar> folded;
  if (w.shape() == concat(row_dims, col_dims)) {
    folded = w;
  } else if (w.order() == 2) {
    folded = fold_paired(w, row_dims, col_dims);
  } else {
    throw Error(Errc::ShapeMismatch, "TTM dims " + to_string(row_dims) + "/" + to_string(col_dims) +
                                         " do not match " + to_string(w.shape()));
  }
  Shape merged;
  for (std::size_t k = 0; k < d; ++k) merged.push_back(row_dims[k] * col_dims[k]);
  const DenseTensor<Scalar> paired = permute(folded, detail::paired_order(d)).reshaped(merged);
  Fitted<TTCores<Scalar>> tt = tt_svd(paired, ranks);
  return {as_ttm(tt.factors, row_dims, col_dims), tt.report};
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// All-zero factorization with the given ranks (used for empty fits).
template <typename Scalar>
FactorizedTensor<Scalar> zero_factors(const Shape& shape, const RankSpec& spec) {
  switch (spec.format) {
    case Format::CP: {
      CPFactors<Scalar> f;
      for (Index dim : shape) f.factors.push_back(Matrix<Scalar>::Zero(dim, spec.ranks.at(0)));
      return f;
    }
    case Format::Tucker: {
      TuckerFactors<Scalar> f;
      f.core = DenseTensor<Scalar>(spec.ranks);
      for (std::size_t n = 0; n < shape.size(); ++n)
        f.factors.push_back(Matrix<Scalar>::Zero(shape[n], spec.ranks.at(n)));
      return f;
    }
    case Format::TT: {
      TTCores<Scalar> f;
      for (std::size_t n = 0; n < shape.size(); ++n)
        f.cores.emplace_back(Shape{spec.ranks.at(n), shape[n], spec.ranks.at(n + 1)});
      return f;
    }
    case Format::TTM: {
      TTMCores<Scalar> f;
      const std::size_t d = shape.size() / 2;
      for (std::size_t n = 0; n < d; ++n)
        f.cores.emplace_back(Shape{spec.ranks.at(n), shape[n], shape[d + n], spec.ranks.at(n + 1)});
      return f;
    }
  }
  throw Error(Errc::ConfigError, "unknown format");
}

/// Unmasked fit of `a` in the format and ranks of `spec`. A TTM spec treats the
/// first half of a's modes as row factors and the second half as column factors.
template <typename Scalar>
Fitted<FactorizedTensor<Scalar>> decompose(const DenseTensor<Scalar>& a, const RankSpec& spec,
                                           const DecomposeConfig& cfg = {},
                                           const FactorizedTensor<Scalar>* warm_start = nullptr) {
  switch (spec.format) {
    case Format::CP: {
      const CPFactors<Scalar>* init = warm_start ? std::get_if<CPFactors<Scalar>>(warm_start) : nullptr;
      CpAlsOptions opts{cfg.max_als_iters, cfg.als_tol, cfg.ridge, cfg.seed};
      auto fit = cp_als(a, spec.ranks.at(0), opts, init);
      return {std::move(fit.factors), std::move(fit.report)};
    }
    case Format::Tucker: {
      auto fit = tucker_hosvd(a, spec.ranks);
      return {std::move(fit.factors), std::move(fit.report)};
    }
    case Format::TT: {
      auto fit = tt_svd(a, spec.ranks);
      return {std::move(fit.factors), std::move(fit.report)};
    }
    case Format::TTM: {
      if (a.order() % 2 != 0) throw Error(Errc::ShapeMismatch, "TTM target must have even order");
      const std::size_t d = a.shape().size() / 2;
      const Shape rows(a.shape().begin(), a.shape().begin() + static_cast<std::ptrdiff_t>(d));
      const Shape cols(a.shape().begin() + static_cast<std::ptrdiff_t>(d), a.shape().end());
      auto fit = ttm_decompose(a, rows, cols, spec.ranks);
      return {std::move(fit.factors), std::move(fit.report)};
    }
  }
  throw Error(Errc::ConfigError, "unknown format");
}

/// Fit minimizing the error on entries where `omega` is 1 only. Masked entries
/// are imputed from the current reconstruction and the plain fit is repeated
/// `cfg.masked_iters` times. The reported error is relative to the observed
/// entries of `a`. An all-zero `omega` yields zero factors with
/// report.empty_support set.
template <typename Scalar>
Fitted<FactorizedTensor<Scalar>> masked_decompose(const DenseTensor<Scalar>& a, const Mask& omega,
                                                  const RankSpec& spec, const DecomposeConfig& cfg = {}) {
  if (omega.shape() != a.shape())
    throw Error(Errc::ShapeMismatch, "mask " + to_string(omega.shape()) + " vs tensor " + to_string(a.shape()));
  const Index observed = omega.count_ones();
  if (observed == 0) {
    Fitted<FactorizedTensor<Scalar>> out{zero_factors<Scalar>(a.shape(), spec), {}};
    out.report.empty_support = true;
    return out;
  }
  if (observed == omega.numel()) return decompose(a, spec, cfg);

  const Vector<Scalar> keep = omega.as<Scalar>();
  const Vector<Scalar> observed_a = a.data().cwiseProduct(keep);
  const Scalar norm_observed = observed_a.norm();
  auto support_error = [&](const DenseTensor<Scalar>& approx) {
    const Scalar r = (observed_a - approx.data().cwiseProduct(keep)).norm();
    return static_cast<double>(norm_observed > Scalar(0) ? r / norm_observed : r);
  };

  DenseTensor<Scalar> target(a.shape(), observed_a);
  Fitted<FactorizedTensor<Scalar>> fit = decompose(target, spec, cfg);
  DecomposeReport report = fit.report;
  report.error_history.clear();
  DenseTensor<Scalar> approx = reconstruct(fit.factors);
  report.error_history.push_back(support_error(approx));
  for (int it = 0; it < cfg.masked_iters; ++it) {
    target.data() = observed_a + approx.data().cwiseProduct(Vector<Scalar>::Ones(keep.size()) - keep);
    fit = decompose(target, spec, cfg, &fit.factors);
    report.singular_update = report.singular_update || fit.report.singular_update;
    approx = reconstruct(fit.factors);
    report.error_history.push_back(support_error(approx));
  }
  report.rank_clamped = fit.report.rank_clamped;
  report.sweeps = cfg.masked_iters + 1;
  report.relative_error = report.error_history.back();
  return {std::move(fit.factors), std::move(report)};
}

}  // namespace tenslim
