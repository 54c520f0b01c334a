#pragma once

// Independent reference implementations used only by the tests. They work on
// plain index arithmetic and loops and share no code path with the library
// routines they check.

#include <cmath>
#include <random>
#include <vector>

#include "tenslim/formats.hpp"

namespace oracle {

using tenslim::Index;
using tenslim::Shape;

inline std::vector<Index> unravel(Index flat, const Shape& shape) {
  std::vector<Index> idx(shape.size());
  for (std::size_t n = shape.size(); n-- > 0;) {
    idx[n] = flat % shape[n];
    flat /= shape[n];
  }
  return idx;
}

inline Index ravel(const std::vector<Index>& idx, const Shape& shape) {
  Index flat = 0;
  for (std::size_t n = 0; n < shape.size(); ++n) flat = flat * shape[n] + idx[n];
  return flat;
}

/// b_{..j..} = sum_{i_n} a_{..i_n..} u_{j i_n}, mode kept.
inline std::vector<double> mode_product(const std::vector<double>& a, const Shape& shape,
                                        const std::vector<std::vector<double>>& u, std::size_t mode, Shape& out_shape) {
  out_shape = shape;
  out_shape[mode] = static_cast<Index>(u.size());
  Index total = 1;
  for (Index s : out_shape) total *= s;
  std::vector<double> out(static_cast<std::size_t>(total), 0.0);
  for (Index flat = 0; flat < total; ++flat) {
    auto idx = unravel(flat, out_shape);
    const Index j = idx[mode];
    double acc = 0.0;
    for (Index i = 0; i < shape[mode]; ++i) {
      idx[mode] = i;
      acc += a[static_cast<std::size_t>(ravel(idx, shape))] * u[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    }
    out[static_cast<std::size_t>(flat)] = acc;
  }
  return out;
}

/// TT entry as an explicit chain of small matrix products over nested loops.
inline double tt_entry(const std::vector<tenslim::DenseTensor<double>>& cores, const std::vector<Index>& idx) {
  std::vector<double> row{1.0};
  for (std::size_t n = 0; n < cores.size(); ++n) {
    const auto& g = cores[n];
    const Index rl = g.dim(0), sz = g.dim(1), rr = g.dim(2);
    std::vector<double> next(static_cast<std::size_t>(rr), 0.0);
    for (Index b = 0; b < rr; ++b)
      for (Index a = 0; a < rl; ++a)
        next[static_cast<std::size_t>(b)] += row[static_cast<std::size_t>(a)] * g.data()[(a * sz + idx[n]) * rr + b];
    row = next;
  }
  return row[0];
}

/// Singular values of m via the eigenvalues of m^T m (self-adjoint solver),
/// sorted descending.
inline std::vector<double> singular_values(const tenslim::Matrix<double>& m) {
  Eigen::SelfAdjointEigenSolver<tenslim::Matrix<double>> eig(m.transpose() * m);
  std::vector<double> out;
  for (Index i = eig.eigenvalues().size(); i-- > 0;) out.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()[i])));
  return out;
}

inline tenslim::TTCores<double> random_tt(const Shape& dims, const Shape& ranks, std::mt19937_64& rng) {
  tenslim::TTCores<double> f;
  for (std::size_t n = 0; n < dims.size(); ++n)
    f.cores.push_back(tenslim::random_normal<double>(Shape{ranks[n], dims[n], ranks[n + 1]}, rng));
  return f;
}

inline tenslim::TTMCores<double> random_ttm(const Shape& rows, const Shape& cols, const Shape& ranks,
                                           std::mt19937_64& rng) {
  tenslim::TTMCores<double> f;
  for (std::size_t n = 0; n < rows.size(); ++n)
    f.cores.push_back(tenslim::random_normal<double>(Shape{ranks[n], rows[n], cols[n], ranks[n + 1]}, rng));
  return f;
}

inline tenslim::CPFactors<double> random_cp(const Shape& dims, Index rank, std::mt19937_64& rng) {
  tenslim::CPFactors<double> f;
  for (Index d : dims) f.factors.push_back(tenslim::random_normal_matrix<double>(d, rank, rng));
  return f;
}

inline tenslim::TuckerFactors<double> random_tucker(const Shape& dims, const Shape& ranks, std::mt19937_64& rng) {
  tenslim::TuckerFactors<double> f;
  f.core = tenslim::random_normal<double>(ranks, rng);
  for (std::size_t n = 0; n < dims.size(); ++n)
    f.factors.push_back(tenslim::random_normal_matrix<double>(dims[n], ranks[n], rng));
  return f;
}

}  // namespace oracle
