// tenslim: compress, fine-tune and analyze networks stored as WeightBundles.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tenslim/dataset.hpp"
#include "tenslim/model_io.hpp"
#include "tenslim/pipeline.hpp"
#include "tenslim/report_io.hpp"
#include "tenslim/trainer.hpp"

namespace tenslim {
int run_selftest(std::ostream& out);
}

using namespace tenslim;
namespace fs = std::filesystem;

namespace {

fs::path side(const fs::path& out, const std::string& suffix) { return fs::path(out.string() + suffix); }

DType parse_out_dtype(const std::string& s) { return parse_dtype(s); }

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

void write_log(const std::vector<EpochRecord>& log, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (const auto& r : log) out << r.to_json().dump() << '\n';
}

void write_momentum(const Network& trained, const TrainResult& result, const fs::path& path) {
  Network copy = trained;
  auto params = parameters(copy);
  WeightBundle b;
  b.metadata = {{"kind", "optimizer_state"}, {"lr", result.final_lr}};
  for (std::size_t k = 0; k < result.momentum.buffers.size() && k < params.size(); ++k) {
    const auto& v = result.momentum.buffers[k];
    b.add("momentum." + params[k].name, Role::Dense, DenseTensor<double>(Shape{v.size()}, v), DType::F64);
  }
  write_bundle(b, path);
}

void print_report(const CompressionReport& report) { write_report_csv(report, std::cout); }

// Writes the bundle, the report and the effective config next to `out`.
void emit(const Network& net, const PipelineConfig& cfg, const fs::path& out, DType dtype,
          const Network* reference = nullptr) {
  save_network(net, out, dtype);
  write_report_csv(network_report(net, reference), side(out, ".report.csv"));
  save_config(cfg, side(out, ".config.json"));
}

TrainOptions train_options(const PipelineConfig& cfg, double final_sparsity, bool verbose) {
  TrainOptions opts;
  opts.distill = cfg.distill;
  opts.optimizer = cfg.optimizer;
  opts.final_sparsity = final_sparsity;
  opts.seed = cfg.seed;
  if (verbose)
    opts.on_epoch = [](const EpochRecord& r) { std::cerr << r.to_json().dump() << '\n'; };
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank + sparse compression of network weights"};
  app.require_subcommand(1);
  std::string in, out, cfg_path, data_path, teacher_path, student_path, dtype_name = "f32";
  std::uint64_t seed = 0;
  bool verbose = false;
  unsigned threads = 0;

  auto* make_data = app.add_subcommand("make-data", "Write the synthetic reference dataset");
  SyntheticSpec synth;
  make_data->add_option("--out", out, "Output bundle")->required();
  make_data->add_option("--seed", synth.seed, "Seed");
  make_data->add_option("--noise", synth.noise, "Noise standard deviation");
  make_data->add_option("--clusters", synth.clusters_per_class, "Clusters per class");
  make_data->add_option("--train-per-class", synth.train_per_class, "Training examples per class");
  make_data->add_option("--val-per-class", synth.val_per_class, "Validation examples per class");

  auto* train = app.add_subcommand("train", "Train the dense reference network from scratch");
  train->add_option("--data", data_path, "Dataset bundle")->required();
  train->add_option("--config", cfg_path, "Pipeline config (distill/optimizer blocks)");
  train->add_option("--out", out, "Output bundle")->required();
  train->add_option("--seed", seed, "Initialization seed");
  train->add_option("--dtype", dtype_name, "f32 or f64");
  train->add_flag("-v,--verbose", verbose);

  auto* compress = app.add_subcommand("compress", "Phase 1: split every compressible weight into L + S");
  compress->add_option("--in", in, "Dense model bundle")->required();
  compress->add_option("--config", cfg_path, "Pipeline config");
  compress->add_option("--out", out, "Output bundle")->required();
  compress->add_option("--threads", threads, "Worker count (0: TENSLIM_THREADS or all cores)");
  compress->add_option("--dtype", dtype_name, "f32 or f64");

  auto* finetune_cmd = app.add_subcommand("finetune", "Phase 2: prune and distill the compressed student");
  finetune_cmd->add_option("--student", student_path, "Compressed model bundle")->required();
  finetune_cmd->add_option("--teacher", teacher_path, "Dense teacher bundle (omit for plain cross-entropy)");
  finetune_cmd->add_option("--data", data_path, "Dataset bundle")->required();
  finetune_cmd->add_option("--config", cfg_path, "Pipeline config");
  finetune_cmd->add_option("--out", out, "Output bundle")->required();
  finetune_cmd->add_option("--dtype", dtype_name, "f32 or f64");
  finetune_cmd->add_flag("-v,--verbose", verbose);

  auto* analyze = app.add_subcommand("analyze", "Layer-wise error table and histograms");
  AnalyzeOptions aopts;
  std::string probe = "tt";
  analyze->add_option("--in", in, "Any bundle")->required();
  analyze->add_option("--out", out, "Output directory")->required();
  analyze->add_option("--format", probe, "Probe format for dense weights (cp, tucker, tt, ttm)");
  analyze->add_option("--budget", aopts.budget_fraction, "Probe budget fraction");
  analyze->add_option("--bins", aopts.bins, "Histogram bins");
  analyze->add_option("--seed", aopts.seed, "Probe seed");
  analyze->add_flag("--svg", aopts.svg, "Also render SVG charts");

  auto* prune_only = app.add_subcommand("prune-only", "Sparse-only baseline: magnitude pruning with distillation");
  std::optional<double> baseline_sparsity;
  prune_only->add_option("--in", in, "Dense model bundle")->required();
  prune_only->add_option("--teacher", teacher_path, "Teacher bundle (default: --in)");
  prune_only->add_option("--data", data_path, "Dataset bundle")->required();
  prune_only->add_option("--config", cfg_path, "Pipeline config");
  prune_only->add_option("--sparsity", baseline_sparsity, "Final sparsity (default: prune.target_sparsity)");
  prune_only->add_option("--out", out, "Output bundle")->required();
  prune_only->add_option("--dtype", dtype_name, "f32 or f64");
  prune_only->add_flag("-v,--verbose", verbose);

  auto* lowrank_only = app.add_subcommand("lowrank-only", "Low-rank-only baseline, optionally fine-tuned");
  lowrank_only->add_option("--in", in, "Dense model bundle")->required();
  lowrank_only->add_option("--teacher", teacher_path, "Teacher bundle (default: --in)");
  lowrank_only->add_option("--data", data_path, "Dataset bundle (omit to skip fine-tuning)");
  lowrank_only->add_option("--config", cfg_path, "Pipeline config");
  lowrank_only->add_option("--out", out, "Output bundle")->required();
  lowrank_only->add_option("--threads", threads, "Worker count");
  lowrank_only->add_option("--dtype", dtype_name, "f32 or f64");
  lowrank_only->add_flag("-v,--verbose", verbose);

  auto* selftest = app.add_subcommand("selftest", "Run the built-in oracle and property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const DType dtype = parse_out_dtype(dtype_name);
    if (*make_data) {
      write_bundle(dataset_to_bundle(make_synthetic(synth)), out);
    } else if (*train) {
      const PipelineConfig cfg = config_or_default(cfg_path);
      cfg.validate();
      const Dataset data = dataset_from_bundle(read_bundle(data_path));
      ReferenceSpec spec;
      spec.input_shape = data.input_shape;
      spec.classes = data.classes;
      std::mt19937_64 rng(derive_seed(seed, "init"));
      Network net = reference_network(spec, rng);
      TrainOptions opts = train_options(cfg, 0.0, verbose);
      opts.seed = seed;
      const TrainResult result = finetune(net, nullptr, data, opts);
      save_network(net, out, dtype);
      write_log(result.log, side(out, ".log.jsonl"));
    } else if (*compress) {
      const PipelineConfig cfg = config_or_default(cfg_path);
      const Network dense = load_network(in);
      const Network net = compress_network(dense, cfg, threads);
      emit(net, cfg, out, dtype, &dense);
      print_report(network_report(net, &dense));
    } else if (*finetune_cmd) {
      const PipelineConfig cfg = config_or_default(cfg_path);
      cfg.validate();
      Network student = load_network(student_path);
      std::optional<Network> teacher;
      if (!teacher_path.empty()) teacher = load_network(teacher_path);
      const Dataset data = dataset_from_bundle(read_bundle(data_path));
      const TrainResult result =
          finetune(student, teacher ? &*teacher : nullptr, data, train_options(cfg, cfg.prune.target_sparsity, verbose));
      emit(student, cfg, out, dtype);
      write_log(result.log, side(out, ".log.jsonl"));
      write_momentum(student, result, side(out, ".opt"));
    } else if (*analyze) {
      aopts.probe_format = parse_format(probe);
      print_report(analyze_bundle(read_bundle(in), out, aopts));
    } else if (*prune_only) {
      PipelineConfig cfg = config_or_default(cfg_path);
      if (baseline_sparsity) cfg.prune.target_sparsity = *baseline_sparsity;
      cfg.validate();
      const Network dense = load_network(in);
      const Network teacher = teacher_path.empty() ? dense : load_network(teacher_path);
      Network student = sparse_only_network(dense, cfg);
      const Dataset data = dataset_from_bundle(read_bundle(data_path));
      const TrainResult result = finetune(student, &teacher, data, train_options(cfg, cfg.prune.target_sparsity, verbose));
      emit(student, cfg, out, dtype);
      write_log(result.log, side(out, ".log.jsonl"));
      write_momentum(student, result, side(out, ".opt"));
    } else if (*lowrank_only) {
      const PipelineConfig cfg = config_or_default(cfg_path);
      const Network dense = load_network(in);
      Network student = lowrank_only_network(dense, cfg, threads);
      if (!data_path.empty()) {
        const Network teacher = teacher_path.empty() ? dense : load_network(teacher_path);
        const Dataset data = dataset_from_bundle(read_bundle(data_path));
        const TrainResult result = finetune(student, &teacher, data, train_options(cfg, 0.0, verbose));
        write_log(result.log, side(out, ".log.jsonl"));
        write_momentum(student, result, side(out, ".opt"));
      }
      emit(student, cfg, out, dtype, &dense);
    } else if (*selftest) {
      return run_selftest(std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
