#include "tenslim/report_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "tenslim/config.hpp"
#include "tenslim/model_io.hpp"

namespace tenslim {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

void row(std::ostream& out, const CompressionRow& r) {
  out << r.layer_name << ',' << r.format << ',' << r.err << ',' << r.param_count_l << ',' << r.nnz_s << ','
      << r.numel << ',' << r.ratio() << '\n';
}

std::string safe_name(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s;
}

}  // namespace

void write_report_csv(const CompressionReport& report, std::ostream& out) {
  out << std::setprecision(17);
  out << "layer_name,format,err,param_count_L,nnz_S,numel,ratio\n";
  for (const auto& r : report.rows) row(out, r);
  row(out, report.totals());
}

void write_report_csv(const CompressionReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_report_csv(report, out);
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "bin_lo,bin_hi,count\n";
  const double w = h.bin_width();
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    out << h.lo + static_cast<double>(k) * w << ',' << h.lo + static_cast<double>(k + 1) * w << ',' << h.counts[k] << '\n';
}

void write_histogram_svg(const std::vector<std::pair<std::string, Histogram>>& series, const std::string& title,
                         const std::filesystem::path& path) {
  const double width = 640, height = 360, margin = 40;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  double peak = 1;
  for (const auto& [name, h] : series)
    for (Index c : h.counts) peak = std::max(peak, static_cast<double>(c) / static_cast<double>(std::max<Index>(h.total(), 1)));
  auto out = open_out(path);
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& [name, h] = series[s];
    const double bw = (width - 2 * margin) / static_cast<double>(h.counts.size());
    const double total = static_cast<double>(std::max<Index>(h.total(), 1));
    out << "<g fill=\"" << colors[s % 4] << "\" fill-opacity=\"0.5\">\n";
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
      const double bar = (height - 2 * margin) * (static_cast<double>(h.counts[k]) / total) / peak;
      out << "<rect x=\"" << margin + static_cast<double>(k) * bw << "\" y=\"" << height - margin - bar << "\" width=\""
          << bw << "\" height=\"" << bar << "\"/>\n";
    }
    out << "</g>\n";
    out << "<text x=\"" << width - margin - 160 << "\" y=\"" << margin + 16 * static_cast<double>(s) << "\" fill=\""
        << colors[s % 4] << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
  }
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  out << "</svg>\n";
}

void write_error_svg(const CompressionReport& report, const std::filesystem::path& path) {
  const double width = 640, height = 360, margin = 40;
  auto out = open_out(path);
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">relative error per layer</text>\n";
  const std::size_t n = std::max<std::size_t>(report.rows.size(), 1);
  const double bw = (width - 2 * margin) / static_cast<double>(n);
  for (std::size_t k = 0; k < report.rows.size(); ++k) {
    const auto& r = report.rows[k];
    const double bar = (height - 2 * margin) * std::min(1.0, std::max(0.0, r.err));
    const double x = margin + static_cast<double>(k) * bw;
    out << "<rect x=\"" << x + 2 << "\" y=\"" << height - margin - bar << "\" width=\"" << bw - 4 << "\" height=\"" << bar
        << "\" fill=\"#1f77b4\"/>\n";
    out << "<text x=\"" << x + 2 << "\" y=\"" << height - margin + 14 << "\" font-family=\"sans-serif\" font-size=\"10\">"
        << r.layer_name << "</text>\n";
  }
  out << "</svg>\n";
}

namespace {

struct Target {
  std::string name;
  DenseTensor<double> weight;
  std::optional<LowRankSparseLayer<double>> layer;
};

std::vector<Target> collect(const WeightBundle& bundle) {
  std::vector<Target> out;
  if (bundle.metadata.value("kind", "") == "model") {
    const Network net = network_from_bundle(bundle);
    for (const Op& op : net.ops) {
      if (!op.has_weight()) continue;
      Target t{op.name, op.effective_weight(), std::nullopt};
      if (op.is_lrs()) t.layer = std::get<LowRankSparseLayer<double>>(op.weight);
      out.push_back(std::move(t));
    }
    return out;
  }
  for (const auto& e : bundle.entries)
    if (e.role == Role::Dense && e.shape.size() >= 2) out.push_back({e.name, e.tensor(), std::nullopt});
  return out;
}

}  // namespace

CompressionReport analyze_bundle(const WeightBundle& bundle, const std::filesystem::path& out_dir,
                                 const AnalyzeOptions& opts) {
  std::filesystem::create_directories(out_dir);
  CompressionReport report;
  for (const Target& t : collect(bundle)) {
    const std::string stem = safe_name(t.name);
    Histogram weights = weight_histogram(t.weight, opts.bins);
    write_histogram_csv(weights, out_dir / (stem + ".weights.csv"));
    std::vector<std::pair<std::string, Histogram>> series{{"weights", weights}};
    if (t.layer) {
      CompressionRow r = compression_row(*t.layer);
      report.rows.push_back(r);
      if (t.layer->sparse) {
        Histogram s = weight_histogram(hadamard(*t.layer->sparse, *t.layer->mask), opts.bins);
        write_histogram_csv(s, out_dir / (stem + ".sparse.csv"));
        series.emplace_back("sparse part", s);
      }
    } else {
      CompressionRow r = dense_row(t.name, t.weight.numel());
      DecomposeConfig dc;
      dc.format = opts.probe_format;
      dc.budget_fraction = opts.budget_fraction;
      dc.seed = derive_seed(opts.seed, t.name);
      if (frobenius_norm(t.weight) > 0.0) {
        const Shape fold = budget_fold_shape(t.weight.shape(), dc.format, dc.budget_fraction);
        const DenseTensor<double> folded = t.weight.reshaped(fold);
        auto fit = decompose(folded, budget_ranks(fold, dc.format, dc.budget_fraction), dc);
        const DenseTensor<double> low = reconstruct(fit.factors);
        r.err = relative_error(folded, low);
        Histogram residual = weight_histogram(folded - low, opts.bins);
        write_histogram_csv(residual, out_dir / (stem + ".residual.csv"));
        series.emplace_back("after low-rank removal", residual);
      } else {
        r.err = 0.0;
      }
      report.rows.push_back(r);
    }
    if (opts.svg) write_histogram_svg(series, t.name, out_dir / (stem + ".hist.svg"));
  }
  write_report_csv(report, out_dir / "layers.csv");
  if (opts.svg) write_error_svg(report, out_dir / "errors.svg");
  return report;
}

}  // namespace tenslim
