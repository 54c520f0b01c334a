#pragma once

// Factorized tensor formats: CP, Tucker, tensor-train (TT) and tensor-train
// matrix (TTM). Each supports full reconstruction, single-entry evaluation,
// exact parameter accounting and the vector-Jacobian product of the
// reconstruction (used to backpropagate into the factors).

#include <string_view>
#include <variant>
#include <vector>

#include "tenslim/tensor.hpp"

namespace tenslim {

enum class Format { CP, Tucker, TT, TTM };

constexpr std::string_view to_string(Format f) {
  switch (f) {
    case Format::CP: return "cp";
    case Format::Tucker: return "tucker";
    case Format::TT: return "tt";
    case Format::TTM: return "ttm";
  }
  return "?";
}

inline Format parse_format(std::string_view name) {
  if (name == "cp") return Format::CP;
  if (name == "tucker") return Format::Tucker;
  if (name == "tt") return Format::TT;
  if (name == "ttm") return Format::TTM;
  throw Error(Errc::ConfigError, "unknown tensor format '" + std::string(name) + "'");
}

/// Rank-R CP model: factor n is I_n x R.
template <typename Scalar>
struct CPFactors {
  std::vector<Matrix<Scalar>> factors;

  Index rank() const { return factors.empty() ? 0 : factors.front().cols(); }
  Shape shape() const {
    Shape s;
    for (const auto& u : factors) s.push_back(u.rows());
    return s;
  }
};

/// Core R_1 x ... x R_d and factors I_n x R_n.
template <typename Scalar>
struct TuckerFactors {
  DenseTensor<Scalar> core;
  std::vector<Matrix<Scalar>> factors;

  Shape ranks() const { return core.shape(); }
  Shape shape() const {
    Shape s;
    for (const auto& u : factors) s.push_back(u.rows());
    return s;
  }
};

/// Cores R_{n-1} x I_n x R_n with R_0 = R_d = 1.
template <typename Scalar>
struct TTCores {
  std::vector<DenseTensor<Scalar>> cores;

  Shape shape() const {
    Shape s;
    for (const auto& g : cores) s.push_back(g.dim(1));
    return s;
  }
  Shape ranks() const {
    Shape r;
    for (const auto& g : cores) r.push_back(g.dim(0));
    if (!cores.empty()) r.push_back(cores.back().dim(2));
    return r;
  }
};

/// Cores R_{n-1} x I_n x J_n x R_n. The represented tensor is indexed
/// (i_1..i_d, j_1..j_d), which is the row-major folding of an I x J matrix.
template <typename Scalar>
struct TTMCores {
  std::vector<DenseTensor<Scalar>> cores;

  Shape row_dims() const {
    Shape s;
    for (const auto& g : cores) s.push_back(g.dim(1));
    return s;
  }
  Shape col_dims() const {
    Shape s;
    for (const auto& g : cores) s.push_back(g.dim(2));
    return s;
  }
  Shape shape() const { return concat(row_dims(), col_dims()); }
  Shape ranks() const {
    Shape r;
    for (const auto& g : cores) r.push_back(g.dim(0));
    if (!cores.empty()) r.push_back(cores.back().dim(3));
    return r;
  }
};

template <typename Scalar>
using FactorizedTensor = std::variant<CPFactors<Scalar>, TuckerFactors<Scalar>, TTCores<Scalar>, TTMCores<Scalar>>;

template <typename Scalar>
Format format_of(const FactorizedTensor<Scalar>& f) {
  return static_cast<Format>(f.index());
}

template <typename Scalar>
Shape shape_of(const FactorizedTensor<Scalar>& f) {
  return std::visit([](const auto& v) { return v.shape(); }, f);
}

/// Rank metadata: {R} for CP, (R_1..R_d) for Tucker, (R_0..R_d) for TT/TTM.
template <typename Scalar>
Shape ranks_of(const FactorizedTensor<Scalar>& f) {
  return std::visit(
      [](const auto& v) -> Shape {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, CPFactors<Scalar>>)
          return Shape{v.rank()};
        else
          return v.ranks();
      },
      f);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

template <typename Scalar>
void validate(const CPFactors<Scalar>& f) {
  if (f.factors.empty()) throw Error(Errc::ShapeMismatch, "CP model has no factors");
  for (const auto& u : f.factors) {
    if (u.cols() != f.rank()) throw Error(Errc::ShapeMismatch, "CP factors disagree on rank");
    if (u.rows() < 1 || u.cols() < 1) throw Error(Errc::ShapeMismatch, "empty CP factor");
  }
}

template <typename Scalar>
void validate(const TuckerFactors<Scalar>& f) {
  if (f.factors.empty() || static_cast<Index>(f.factors.size()) != f.core.order())
    throw Error(Errc::ShapeMismatch, "Tucker core order does not match factor count");
  for (std::size_t n = 0; n < f.factors.size(); ++n)
    if (f.factors[n].cols() != f.core.shape()[n] || f.factors[n].rows() < 1)
      throw Error(Errc::ShapeMismatch, "Tucker factor " + std::to_string(n) + " does not match core mode size");
}

namespace detail {
template <typename Scalar>
void validate_chain(const std::vector<DenseTensor<Scalar>>& cores, Index core_order) {
  if (cores.empty()) throw Error(Errc::RankChainBroken, "no cores");
  for (std::size_t n = 0; n < cores.size(); ++n) {
    if (cores[n].order() != core_order)
      throw Error(Errc::RankChainBroken, "core " + std::to_string(n) + " has order " +
                                             std::to_string(cores[n].order()));
    if (n + 1 < cores.size() && cores[n].dim(core_order - 1) != cores[n + 1].dim(0))
      throw Error(Errc::RankChainBroken, "rank between cores " + std::to_string(n) + " and " +
                                             std::to_string(n + 1) + " does not chain");
  }
  if (cores.front().dim(0) != 1 || cores.back().dim(core_order - 1) != 1)
    throw Error(Errc::RankChainBroken, "boundary ranks must be 1");
}
}  // namespace detail

template <typename Scalar>
void validate(const TTCores<Scalar>& f) {
  detail::validate_chain(f.cores, 3);
}

template <typename Scalar>
void validate(const TTMCores<Scalar>& f) {
  detail::validate_chain(f.cores, 4);
}

template <typename Scalar>
void validate(const FactorizedTensor<Scalar>& f) {
  std::visit([](const auto& v) { validate(v); }, f);
}

// ---------------------------------------------------------------------------
// Helpers shared with the decomposer
// ---------------------------------------------------------------------------

namespace detail {

/// Khatri-Rao product of the given factors (all with R columns), rows ordered
/// row-major over the listed modes. Matches the column order of unfold().
template <typename Scalar>
Matrix<Scalar> khatri_rao(const std::vector<const Matrix<Scalar>*>& factors, Index rank) {
  Matrix<Scalar> acc = Matrix<Scalar>::Ones(1, rank);
  for (const Matrix<Scalar>* u : factors) {
    Matrix<Scalar> next(acc.rows() * u->rows(), rank);
    for (Index k = 0; k < acc.rows(); ++k)
      for (Index i = 0; i < u->rows(); ++i) next.row(k * u->rows() + i) = acc.row(k).cwiseProduct(u->row(i));
    acc = std::move(next);
  }
  return acc;
}

template <typename Scalar>
Matrix<Scalar> khatri_rao_except(const std::vector<Matrix<Scalar>>& factors, std::size_t skip) {
  std::vector<const Matrix<Scalar>*> others;
  for (std::size_t m = 0; m < factors.size(); ++m)
    if (m != skip) others.push_back(&factors[m]);
  return khatri_rao(others, factors.front().cols());
}

inline std::vector<Index> paired_order(std::size_t d) {
  std::vector<Index> perm;
  for (std::size_t k = 0; k < d; ++k) {
    perm.push_back(static_cast<Index>(k));
    perm.push_back(static_cast<Index>(d + k));
  }
  return perm;
}

inline std::vector<Index> split_order(std::size_t d) {
  std::vector<Index> perm;
  for (std::size_t k = 0; k < d; ++k) perm.push_back(static_cast<Index>(2 * k));
  for (std::size_t k = 0; k < d; ++k) perm.push_back(static_cast<Index>(2 * k + 1));
  return perm;
}

}  // namespace detail

/// Views a TTM as a TT over merged (I_n J_n) modes in paired order.
template <typename Scalar>
TTCores<Scalar> as_tt(const TTMCores<Scalar>& f) {
  TTCores<Scalar> tt;
  for (const auto& g : f.cores) tt.cores.push_back(g.reshaped(Shape{g.dim(0), g.dim(1) * g.dim(2), g.dim(3)}));
  return tt;
}

/// Inverse of as_tt given the row/col factorization.
template <typename Scalar>
TTMCores<Scalar> as_ttm(const TTCores<Scalar>& f, const Shape& row_dims, const Shape& col_dims) {
  TTMCores<Scalar> ttm;
  for (std::size_t n = 0; n < f.cores.size(); ++n) {
    const auto& g = f.cores[n];
    ttm.cores.push_back(g.reshaped(Shape{g.dim(0), row_dims[n], col_dims[n], g.dim(2)}));
  }
  return ttm;
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

template <typename Scalar>
DenseTensor<Scalar> reconstruct(const CPFactors<Scalar>& f) {
  validate(f);
  const Shape shape = f.shape();
  const Matrix<Scalar> rest = detail::khatri_rao_except(f.factors, 0);
  RowMatrix<Scalar> full = f.factors.front() * rest.transpose();
  return DenseTensor<Scalar>(shape, Eigen::Map<const Vector<Scalar>>(full.data(), full.size()));
}

template <typename Scalar>
DenseTensor<Scalar> reconstruct(const TuckerFactors<Scalar>& f) {
  validate(f);
  DenseTensor<Scalar> out = f.core;
  for (std::size_t n = 0; n < f.factors.size(); ++n)
    out = detail::mode_product_keep(out, f.factors[n], static_cast<Index>(n));
  return out;
}

template <typename Scalar>
DenseTensor<Scalar> reconstruct(const TTCores<Scalar>& f) {
  validate(f);
  const auto& first = f.cores.front();
  RowMatrix<Scalar> acc = first.as_matrix(first.dim(1), first.dim(2));
  for (std::size_t n = 1; n < f.cores.size(); ++n) {
    const auto& g = f.cores[n];
    RowMatrix<Scalar> next = acc * g.as_matrix(g.dim(0), g.dim(1) * g.dim(2));
    acc = Eigen::Map<RowMatrix<Scalar>>(next.data(), acc.rows() * g.dim(1), g.dim(2));
  }
  return DenseTensor<Scalar>(f.shape(), Eigen::Map<const Vector<Scalar>>(acc.data(), acc.size()));
}

template <typename Scalar>
DenseTensor<Scalar> reconstruct(const TTMCores<Scalar>& f) {
  validate(f);
  const std::size_t d = f.cores.size();
  Shape paired;
  for (const auto& g : f.cores) {
    paired.push_back(g.dim(1));
    paired.push_back(g.dim(2));
  }
  return permute(reconstruct(as_tt(f)).reshaped(paired), detail::split_order(d));
}

template <typename Scalar>
DenseTensor<Scalar> reconstruct(const FactorizedTensor<Scalar>& f) {
  return std::visit([](const auto& v) { return reconstruct(v); }, f);
}

// ---------------------------------------------------------------------------
// Element access
// ---------------------------------------------------------------------------

namespace detail {
inline void check_index(const Shape& shape, std::span<const Index> index) {
  if (index.size() != shape.size())
    throw Error(Errc::IndexOutOfBounds, "index order " + std::to_string(index.size()) + " for shape " +
                                            to_string(shape));
  for (std::size_t n = 0; n < shape.size(); ++n)
    if (index[n] < 0 || index[n] >= shape[n])
      throw Error(Errc::IndexOutOfBounds, "index out of range for shape " + to_string(shape));
}
}  // namespace detail

template <typename Scalar>
Scalar element_at(const CPFactors<Scalar>& f, std::span<const Index> index) {
  validate(f);
  detail::check_index(f.shape(), index);
  Eigen::Array<Scalar, 1, Eigen::Dynamic> prod = Eigen::Array<Scalar, 1, Eigen::Dynamic>::Ones(f.rank());
  for (std::size_t n = 0; n < f.factors.size(); ++n) prod *= f.factors[n].row(index[n]).array();
  return prod.sum();
}

template <typename Scalar>
Scalar element_at(const TuckerFactors<Scalar>& f, std::span<const Index> index) {
  validate(f);
  detail::check_index(f.shape(), index);
  DenseTensor<Scalar> t = f.core;
  for (std::size_t n = f.factors.size(); n-- > 0;)
    t = mode_n_product(t, f.factors[n].row(index[n]), static_cast<Index>(n));
  return t[0];
}

template <typename Scalar>
Scalar element_at(const TTCores<Scalar>& f, std::span<const Index> index) {
  validate(f);
  detail::check_index(f.shape(), index);
  RowMatrix<Scalar> acc = RowMatrix<Scalar>::Ones(1, 1);
  for (std::size_t n = 0; n < f.cores.size(); ++n) {
    const auto& g = f.cores[n];
    auto slab = g.as_matrix(g.dim(0), g.dim(1) * g.dim(2));
    acc = acc * slab.middleCols(index[n] * g.dim(2), g.dim(2));
  }
  return acc(0, 0);
}

template <typename Scalar>
Scalar element_at(const TTMCores<Scalar>& f, std::span<const Index> index) {
  validate(f);
  detail::check_index(f.shape(), index);
  const std::size_t d = f.cores.size();
  RowMatrix<Scalar> acc = RowMatrix<Scalar>::Ones(1, 1);
  for (std::size_t n = 0; n < d; ++n) {
    const auto& g = f.cores[n];
    const Index merged = index[n] * g.dim(2) + index[d + n];
    auto slab = g.as_matrix(g.dim(0), g.dim(1) * g.dim(2) * g.dim(3));
    acc = acc * slab.middleCols(merged * g.dim(3), g.dim(3));
  }
  return acc(0, 0);
}

template <typename Scalar>
Scalar element_at(const FactorizedTensor<Scalar>& f, std::span<const Index> index) {
  return std::visit([&](const auto& v) { return element_at(v, index); }, f);
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

template <typename Scalar>
Index param_count(const CPFactors<Scalar>& f) {
  Index total = 0;
  for (const auto& u : f.factors) total += u.size();
  return total;
}

template <typename Scalar>
Index param_count(const TuckerFactors<Scalar>& f) {
  Index total = f.core.numel();
  for (const auto& u : f.factors) total += u.size();
  return total;
}

template <typename Scalar>
Index param_count(const TTCores<Scalar>& f) {
  Index total = 0;
  for (const auto& g : f.cores) total += g.numel();
  return total;
}

template <typename Scalar>
Index param_count(const TTMCores<Scalar>& f) {
  Index total = 0;
  for (const auto& g : f.cores) total += g.numel();
  return total;
}

template <typename Scalar>
Index param_count(const FactorizedTensor<Scalar>& f) {
  return std::visit([](const auto& v) { return param_count(v); }, f);
}

/// Every stored array of a factorization, in serialization order
/// (CP: factors; Tucker: core then factors; TT/TTM: cores).
template <typename Scalar>
std::vector<Eigen::Map<Vector<Scalar>>> parameter_arrays(FactorizedTensor<Scalar>& f) {
  std::vector<Eigen::Map<Vector<Scalar>>> out;
  auto add = [&](Scalar* p, Index n) { out.emplace_back(p, n); };
  std::visit(
      [&](auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CPFactors<Scalar>>) {
          for (auto& u : v.factors) add(u.data(), u.size());
        } else if constexpr (std::is_same_v<T, TuckerFactors<Scalar>>) {
          add(v.core.data().data(), v.core.numel());
          for (auto& u : v.factors) add(u.data(), u.size());
        } else {
          for (auto& g : v.cores) add(g.data().data(), g.numel());
        }
      },
      f);
  return out;
}

// ---------------------------------------------------------------------------
// Backpropagation through reconstruction
// ---------------------------------------------------------------------------

/// Given dLoss/dFull (shape of the reconstruction), returns dLoss/dFactors in
/// the same layout as `f`.
template <typename Scalar>
CPFactors<Scalar> reconstruct_vjp(const CPFactors<Scalar>& f, const DenseTensor<Scalar>& grad) {
  CPFactors<Scalar> out;
  for (std::size_t n = 0; n < f.factors.size(); ++n)
    out.factors.push_back(unfold(grad, static_cast<Index>(n)) * detail::khatri_rao_except(f.factors, n));
  return out;
}

template <typename Scalar>
TuckerFactors<Scalar> reconstruct_vjp(const TuckerFactors<Scalar>& f, const DenseTensor<Scalar>& grad) {
  TuckerFactors<Scalar> out;
  const std::size_t d = f.factors.size();
  DenseTensor<Scalar> core_grad = grad;
  for (std::size_t n = 0; n < d; ++n)
    core_grad = detail::mode_product_keep(core_grad, f.factors[n].transpose(), static_cast<Index>(n));
  out.core = std::move(core_grad);
  for (std::size_t n = 0; n < d; ++n) {
    DenseTensor<Scalar> partial = f.core;
    for (std::size_t m = 0; m < d; ++m)
      if (m != n) partial = detail::mode_product_keep(partial, f.factors[m], static_cast<Index>(m));
    out.factors.push_back(unfold(grad, static_cast<Index>(n)) *
                          unfold(partial, static_cast<Index>(n)).transpose());
  }
  return out;
}

template <typename Scalar>
TTCores<Scalar> reconstruct_vjp(const TTCores<Scalar>& f, const DenseTensor<Scalar>& grad) {
  const std::size_t d = f.cores.size();
  const Shape shape = f.shape();
  // left[n]: (I_1..I_{n-1}) x R_{n-1};  right[n]: R_n x (I_{n+1}..I_d)
  std::vector<RowMatrix<Scalar>> left(d), right(d);
  left[0] = RowMatrix<Scalar>::Ones(1, 1);
  for (std::size_t n = 1; n < d; ++n) {
    const auto& g = f.cores[n - 1];
    RowMatrix<Scalar> next = left[n - 1] * g.as_matrix(g.dim(0), g.dim(1) * g.dim(2));
    left[n] = Eigen::Map<RowMatrix<Scalar>>(next.data(), left[n - 1].rows() * g.dim(1), g.dim(2));
  }
  right[d - 1] = RowMatrix<Scalar>::Ones(1, 1);
  for (std::size_t n = d - 1; n > 0; --n) {
    const auto& g = f.cores[n];
    RowMatrix<Scalar> next = g.as_matrix(g.dim(0) * g.dim(1), g.dim(2)) * right[n];
    right[n - 1] = Eigen::Map<RowMatrix<Scalar>>(next.data(), g.dim(0), g.dim(1) * right[n].cols());
  }
  TTCores<Scalar> out;
  for (std::size_t n = 0; n < d; ++n) {
    const auto& g = f.cores[n];
    const Index before = left[n].rows(), size = shape[n], after = right[n].cols();
    auto slab = grad.as_matrix(before, size * after);
    DenseTensor<Scalar> dg(g.shape());
    auto dst = dg.as_matrix(g.dim(0), size * g.dim(2));
    for (Index i = 0; i < size; ++i)
      dst.middleCols(i * g.dim(2), g.dim(2)).noalias() =
          left[n].transpose() * slab.middleCols(i * after, after) * right[n].transpose();
    out.cores.push_back(std::move(dg));
  }
  return out;
}

template <typename Scalar>
TTMCores<Scalar> reconstruct_vjp(const TTMCores<Scalar>& f, const DenseTensor<Scalar>& grad) {
  const std::size_t d = f.cores.size();
  const TTCores<Scalar> tt = as_tt(f);
  DenseTensor<Scalar> paired = permute(grad, detail::paired_order(d)).reshaped(tt.shape());
  return as_ttm(reconstruct_vjp(tt, paired), f.row_dims(), f.col_dims());
}

template <typename Scalar>
FactorizedTensor<Scalar> reconstruct_vjp(const FactorizedTensor<Scalar>& f, const DenseTensor<Scalar>& grad) {
  if (grad.shape() != shape_of(f)) throw Error(Errc::ShapeMismatch, "gradient shape does not match factorization");
  return std::visit([&](const auto& v) -> FactorizedTensor<Scalar> { return reconstruct_vjp(v, grad); }, f);
}

}  // namespace tenslim
