#pragma once

// CSV/SVG outputs of the analysis flows.

#include <filesystem>
#include <ostream>

#include "tenslim/analysis.hpp"
#include "tenslim/bundle.hpp"

namespace tenslim {

/// Columns: layer_name,format,err,param_count_L,nnz_S,numel,ratio. A TOTAL row
/// closes the table.
void write_report_csv(const CompressionReport& report, std::ostream& out);
void write_report_csv(const CompressionReport& report, const std::filesystem::path& path);

/// Columns: bin_lo,bin_hi,count.
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);

/// Bar charts as standalone SVG documents.
void write_histogram_svg(const std::vector<std::pair<std::string, Histogram>>& series, const std::string& title,
                         const std::filesystem::path& path);
void write_error_svg(const CompressionReport& report, const std::filesystem::path& path);

struct AnalyzeOptions {
  Format probe_format = Format::TT;
  double budget_fraction = 0.10;
  std::size_t bins = 101;
  bool svg = false;
  std::uint64_t seed = 0;
};

/// Layer-wise error table plus histograms for every weight in a bundle.
/// Compressed layers report their own L. Dense weights of order >= 2 report
/// the error of a probe fit in `probe_format` at the budget, a weight histogram
/// and a histogram of the residual after removing that fit; their storage
/// columns describe the dense weight (ratio 1).
CompressionReport analyze_bundle(const WeightBundle& bundle, const std::filesystem::path& out_dir,
                                 const AnalyzeOptions& opts);

}  // namespace tenslim
