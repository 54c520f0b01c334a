#pragma once

// Diagnostics: low-rank fit error, weight histograms and compression accounting.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tenslim/lrs.hpp"

namespace tenslim {

/// ||A - L||_F / ||A||_F.
template <typename Scalar>
double relative_error(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& approx) {
  if (a.numel() != approx.numel()) throw Error(Errc::ShapeMismatch, "relative error of mismatched tensors");
  const Scalar norm_a = frobenius_norm(a);
  if (norm_a == Scalar(0)) throw Error(Errc::ZeroNorm, "relative error against a zero tensor");
  return static_cast<double>((a.data() - approx.data()).norm() / norm_a);
}

template <typename Scalar>
double relative_error(const DenseTensor<Scalar>& a, const FactorizedTensor<Scalar>& l) {
  return relative_error(a, reconstruct(l));
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<Index> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size()); }
  double bin_center(std::size_t k) const { return lo + (static_cast<double>(k) + 0.5) * bin_width(); }
  Index total() const {
    Index t = 0;
    for (Index c : counts) t += c;
    return t;
  }
};

/// Histogram over [-max|v|, max|v|] with `bins` equal bins (default 101, so
/// zero sits in the middle of the central bin).
template <typename Scalar>
Histogram weight_histogram(std::span<const Scalar> values, std::size_t bins = 101) {
  if (values.empty()) throw Error(Errc::EmptyInput, "histogram of no values");
  if (bins == 0) throw Error(Errc::EmptyInput, "histogram needs at least one bin");
  double extent = 0.0;
  for (Scalar v : values) extent = std::max(extent, static_cast<double>(std::abs(v)));
  if (extent == 0.0) extent = 1.0;
  Histogram h{-extent, extent, std::vector<Index>(bins, 0)};
  const double width = h.bin_width();
  for (Scalar v : values) {
    auto k = static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(v) - h.lo) / width));
    k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(k)];
  }
  return h;
}

template <typename Scalar>
Histogram weight_histogram(const DenseTensor<Scalar>& t, std::size_t bins = 101) {
  return weight_histogram<Scalar>(std::span<const Scalar>(t.data().data(), static_cast<std::size_t>(t.numel())), bins);
}

/// One row of the compression table.
struct CompressionRow {
  std::string layer_name;
  std::string format;  // cp/tucker/tt/ttm, "sparse" or "dense"
  std::string mode;
  Shape ranks;
  double err = 0.0;  // ||A - L|| / ||A|| against the effective weight; 1 when L is absent
  Index param_count_l = 0;
  Index nnz_s = 0;
  Index numel = 0;

  Index stored() const { return param_count_l + nnz_s; }
  /// numel / stored: 1.0 for an uncompressed layer, > 1 when compressed.
  double ratio() const { return stored() ? static_cast<double>(numel) / static_cast<double>(stored()) : 0.0; }
};

struct CompressionReport {
  std::vector<CompressionRow> rows;

  CompressionRow totals() const {
    CompressionRow t;
    t.layer_name = "TOTAL";
    t.format = "-";
    t.mode = "-";
    double err_num = 0.0, err_den = 0.0;
    for (const auto& r : rows) {
      t.param_count_l += r.param_count_l;
      t.nnz_s += r.nnz_s;
      t.numel += r.numel;
      err_num += r.err * static_cast<double>(r.numel);
      err_den += static_cast<double>(r.numel);
    }
    t.err = err_den > 0 ? err_num / err_den : 0.0;
    return t;
  }
};

/// Row for a dense (uncompressed) weight: everything is stored.
inline CompressionRow dense_row(const std::string& name, Index count) {
  CompressionRow r;
  r.layer_name = name;
  r.format = "dense";
  r.mode = "dense";
  r.err = 1.0;
  r.nnz_s = count;
  r.numel = count;
  return r;
}

template <typename Scalar>
CompressionRow compression_row(const LowRankSparseLayer<Scalar>& layer) {
  CompressionRow r;
  r.layer_name = layer.name;
  r.mode = std::string(to_string(layer.mode));
  r.numel = numel(layer.original_shape);
  if (layer.low_rank) {
    r.format = std::string(to_string(format_of(*layer.low_rank)));
    r.ranks = ranks_of(*layer.low_rank);
    r.param_count_l = param_count(*layer.low_rank);
    const DenseTensor<Scalar> a = effective_weight(layer);
    const Scalar norm_a = frobenius_norm(a);
    r.err = norm_a > Scalar(0) ? relative_error(a.reshaped(layer.fold_shape), *layer.low_rank) : 0.0;
  } else {
    r.format = "sparse";
    r.err = 1.0;
  }
  if (layer.mask) r.nnz_s = layer.mask->count_ones();
  return r;
}

template <typename Scalar>
CompressionReport compression_report(std::span<const LowRankSparseLayer<Scalar>> layers) {
  CompressionReport report;
  for (const auto& layer : layers) report.rows.push_back(compression_row(layer));
  return report;
}

}  // namespace tenslim
