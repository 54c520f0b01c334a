#pragma once

// Pipeline configuration: a JSON document with global defaults and per-layer
// overrides. Unknown keys are rejected with the dotted path of the key.
//
// {
//   "seed": 0,
//   "compress": {"format": "tt", "budget_fraction": 0.1, "mode": "additive",
//                "init": "residual", "top_k_fraction": null, "fold_shape": null,
//                "max_als_iters": 100, "als_tol": 1e-6, "masked_iters": 10,
//                "strict_budget": false},
//   "layers": {"fc1": {"format": "cp", "skip": false, ...}},
//   "prune": {"target_sparsity": 0.8},
//   "distill": {"alpha": 0.9, "temperature": 3, "epochs": 10, "batch_size": 32},
//   "optimizer": {"lr": 0.1, "momentum": 0.9, "decay_factor": 0.7, "decay_every_epochs": 5}
// }

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "tenslim/decomposer.hpp"
#include "tenslim/lrs.hpp"

namespace tenslim {

enum class InitScheme { Residual, Masking };

std::string_view to_string(InitScheme s);
InitScheme parse_init(std::string_view s);

struct LayerSettings {
  Format format = Format::TT;
  double budget_fraction = 0.10;
  ReconstructionMode mode = ReconstructionMode::Additive;
  InitScheme init = InitScheme::Residual;
  std::optional<double> top_k_fraction;  // default 1 - target sparsity
  std::optional<Shape> fold_shape;
  bool skip = false;
};

struct CompressSettings {
  LayerSettings defaults;
  int max_als_iters = 100;
  double als_tol = 1e-6;
  int masked_iters = 10;
  bool strict_budget = false;
  std::map<std::string, nlohmann::json> overrides;  // raw per-layer blocks, already key-checked
};

struct PruneSettings {
  double target_sparsity = 0.8;
};

struct DistillSettings {
  double alpha = 0.9;
  double temperature = 3.0;
  int epochs = 10;
  int batch_size = 32;
};

struct OptimizerSettings {
  double lr = 0.1;
  double momentum = 0.9;
  double decay_factor = 0.7;
  int decay_every_epochs = 5;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  CompressSettings compress;
  PruneSettings prune;
  DistillSettings distill;
  OptimizerSettings optimizer;

  /// Settings for one layer: defaults with that layer's overrides applied.
  LayerSettings layer(const std::string& name) const;
  /// Decomposition options for a layer, with its derived seed.
  DecomposeConfig decompose_config(const std::string& name) const;
  double top_k_for(const LayerSettings& s) const;

  void validate() const;
  nlohmann::json to_json() const;  // effective config, defaults resolved
  static PipelineConfig from_json(const nlohmann::json& j);
};

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);

/// Stable 64-bit FNV-1a hash; sub-seeds are master ^ hash(name).
std::uint64_t fnv1a(std::string_view s);
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

}  // namespace tenslim
