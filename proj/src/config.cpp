#include "tenslim/config.hpp"

#include <fstream>
#include <set>

namespace tenslim {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& key, const std::string& what) {
  throw Error(Errc::ConfigError, "config key '" + key + "': " + what);
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) config_error(path.empty() ? "<root>" : path, "must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) config_error(path.empty() ? key : path + "." + key, "unknown key");
  }
}

template <typename T>
T read(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(path + "." + key, "has the wrong type");
  }
}

double read_number(const json& j, const std::string& key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) config_error(path + "." + key, "must be a number");
  return j.at(key).get<double>();
}

int read_int(const json& j, const std::string& key, const std::string& path, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) config_error(path + "." + key, "must be an integer");
  return j.at(key).get<int>();
}

const std::set<std::string> kLayerKeys{"format", "budget_fraction", "mode", "init", "top_k_fraction", "fold_shape", "skip"};

void apply_layer(const json& j, const std::string& path, LayerSettings& s) {
  check_keys(j, path, kLayerKeys);
  try {
    if (j.contains("format")) s.format = parse_format(read<std::string>(j, "format", path, ""));
    if (j.contains("mode")) {
      s.mode = parse_mode(read<std::string>(j, "mode", path, ""));
      if (!j.contains("init")) s.init = s.mode == ReconstructionMode::Masking ? InitScheme::Masking : InitScheme::Residual;
    }
    if (j.contains("init")) s.init = parse_init(read<std::string>(j, "init", path, ""));
  } catch (const Error& e) {
    config_error(path, e.what());
  }
  s.budget_fraction = read_number(j, "budget_fraction", path, s.budget_fraction);
  if (j.contains("top_k_fraction")) {
    if (j.at("top_k_fraction").is_null())
      s.top_k_fraction.reset();
    else
      s.top_k_fraction = read_number(j, "top_k_fraction", path, 0.0);
  }
  if (j.contains("fold_shape")) {
    if (j.at("fold_shape").is_null())
      s.fold_shape.reset();
    else
      s.fold_shape = read<Shape>(j, "fold_shape", path, {});
  }
  s.skip = read<bool>(j, "skip", path, s.skip);
}

json layer_json(const LayerSettings& s) {
  json j;
  j["format"] = to_string(s.format);
  j["budget_fraction"] = s.budget_fraction;
  j["mode"] = to_string(s.mode);
  j["init"] = to_string(s.init);
  j["top_k_fraction"] = s.top_k_fraction ? json(*s.top_k_fraction) : json(nullptr);
  j["fold_shape"] = s.fold_shape ? json(*s.fold_shape) : json(nullptr);
  j["skip"] = s.skip;
  return j;
}

void validate_layer(const LayerSettings& s, const std::string& path) {
  if (!(s.budget_fraction > 0.0 && s.budget_fraction <= 1.0)) config_error(path + ".budget_fraction", "must be in (0, 1]");
  if (s.top_k_fraction && !(*s.top_k_fraction >= 0.0 && *s.top_k_fraction < 1.0))
    config_error(path + ".top_k_fraction", "must be in [0, 1)");
  if (s.fold_shape) {
    if (s.fold_shape->empty()) config_error(path + ".fold_shape", "must be nonempty");
    for (Index d : *s.fold_shape)
      if (d < 1) config_error(path + ".fold_shape", "entries must be positive");
    if (s.format == Format::TTM && s.fold_shape->size() % 2) config_error(path + ".fold_shape", "TTM needs even order");
  }
}

}  // namespace

std::string_view to_string(InitScheme s) { return s == InitScheme::Residual ? "residual" : "masking"; }

InitScheme parse_init(std::string_view s) {
  if (s == "residual") return InitScheme::Residual;
  if (s == "masking") return InitScheme::Masking;
  throw Error(Errc::ConfigError, "unknown init scheme '" + std::string(s) + "'");
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name) { return master ^ fnv1a(name); }

LayerSettings PipelineConfig::layer(const std::string& name) const {
  LayerSettings s = compress.defaults;
  if (auto it = compress.overrides.find(name); it != compress.overrides.end()) apply_layer(it->second, "layers." + name, s);
  return s;
}

DecomposeConfig PipelineConfig::decompose_config(const std::string& name) const {
  const LayerSettings s = layer(name);
  DecomposeConfig d;
  d.format = s.format;
  d.budget_fraction = s.budget_fraction;
  d.max_als_iters = compress.max_als_iters;
  d.als_tol = compress.als_tol;
  d.masked_iters = compress.masked_iters;
  d.fold_shape = s.fold_shape;
  d.seed = derive_seed(seed, name);
  d.strict_budget = compress.strict_budget;
  return d;
}

double PipelineConfig::top_k_for(const LayerSettings& s) const {
  return s.top_k_fraction ? *s.top_k_fraction : 1.0 - prune.target_sparsity;
}

void PipelineConfig::validate() const {
  validate_layer(compress.defaults, "compress");
  for (const auto& [name, block] : compress.overrides) validate_layer(layer(name), "layers." + name);
  if (compress.max_als_iters < 1) config_error("compress.max_als_iters", "must be >= 1");
  if (!(compress.als_tol >= 0.0)) config_error("compress.als_tol", "must be >= 0");
  if (compress.masked_iters < 0) config_error("compress.masked_iters", "must be >= 0");
  if (!(prune.target_sparsity >= 0.0 && prune.target_sparsity < 1.0))
    config_error("prune.target_sparsity", "must be in [0, 1)");
  if (!(distill.alpha >= 0.0 && distill.alpha <= 1.0)) config_error("distill.alpha", "must be in [0, 1]");
  if (!(distill.temperature > 0.0)) config_error("distill.temperature", "must be positive");
  if (distill.epochs < 1) config_error("distill.epochs", "must be >= 1");
  if (distill.batch_size < 1) config_error("distill.batch_size", "must be >= 1");
  if (!(optimizer.lr >= 0.0)) config_error("optimizer.lr", "must be >= 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) config_error("optimizer.momentum", "must be in [0, 1)");
  if (!(optimizer.decay_factor > 0.0)) config_error("optimizer.decay_factor", "must be positive");
  if (optimizer.decay_every_epochs < 1) config_error("optimizer.decay_every_epochs", "must be >= 1");
}

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  json c = layer_json(compress.defaults);
  c.erase("skip");
  c["max_als_iters"] = compress.max_als_iters;
  c["als_tol"] = compress.als_tol;
  c["masked_iters"] = compress.masked_iters;
  c["strict_budget"] = compress.strict_budget;
  j["compress"] = c;
  j["layers"] = json::object();
  for (const auto& [name, block] : compress.overrides) j["layers"][name] = layer_json(layer(name));
  j["prune"] = {{"target_sparsity", prune.target_sparsity}};
  j["distill"] = {{"alpha", distill.alpha},
                  {"temperature", distill.temperature},
                  {"epochs", distill.epochs},
                  {"batch_size", distill.batch_size}};
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"momentum", optimizer.momentum},
                    {"decay_factor", optimizer.decay_factor},
                    {"decay_every_epochs", optimizer.decay_every_epochs}};
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  check_keys(j, "", {"seed", "compress", "layers", "prune", "distill", "optimizer"});
  PipelineConfig cfg;
  if (j.contains("seed")) {
    const json& v = j.at("seed");
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      config_error("seed", "must be a nonnegative integer");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("compress")) {
    const json& c = j.at("compress");
    std::set<std::string> keys = kLayerKeys;
    keys.erase("skip");
    for (const char* k : {"max_als_iters", "als_tol", "masked_iters", "strict_budget"}) keys.insert(k);
    check_keys(c, "compress", keys);
    json layer_part = json::object();
    for (const auto& k : kLayerKeys)
      if (c.contains(k)) layer_part[k] = c.at(k);
    apply_layer(layer_part, "compress", cfg.compress.defaults);
    cfg.compress.max_als_iters = read_int(c, "max_als_iters", "compress", cfg.compress.max_als_iters);
    cfg.compress.als_tol = read_number(c, "als_tol", "compress", cfg.compress.als_tol);
    cfg.compress.masked_iters = read_int(c, "masked_iters", "compress", cfg.compress.masked_iters);
    cfg.compress.strict_budget = read<bool>(c, "strict_budget", "compress", cfg.compress.strict_budget);
  }
  if (j.contains("layers")) {
    const json& l = j.at("layers");
    if (!l.is_object()) config_error("layers", "must be an object");
    for (const auto& [name, block] : l.items()) {
      LayerSettings probe;
      apply_layer(block, "layers." + name, probe);
      cfg.compress.overrides[name] = block;
    }
  }
  if (j.contains("prune")) {
    const json& p = j.at("prune");
    check_keys(p, "prune", {"target_sparsity"});
    cfg.prune.target_sparsity = read_number(p, "target_sparsity", "prune", cfg.prune.target_sparsity);
  }
  if (j.contains("distill")) {
    const json& d = j.at("distill");
    check_keys(d, "distill", {"alpha", "temperature", "epochs", "batch_size"});
    cfg.distill.alpha = read_number(d, "alpha", "distill", cfg.distill.alpha);
    cfg.distill.temperature = read_number(d, "temperature", "distill", cfg.distill.temperature);
    cfg.distill.epochs = read_int(d, "epochs", "distill", cfg.distill.epochs);
    cfg.distill.batch_size = read_int(d, "batch_size", "distill", cfg.distill.batch_size);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, "optimizer", {"lr", "momentum", "decay_factor", "decay_every_epochs"});
    cfg.optimizer.lr = read_number(o, "lr", "optimizer", cfg.optimizer.lr);
    cfg.optimizer.momentum = read_number(o, "momentum", "optimizer", cfg.optimizer.momentum);
    cfg.optimizer.decay_factor = read_number(o, "decay_factor", "optimizer", cfg.optimizer.decay_factor);
    cfg.optimizer.decay_every_epochs = read_int(o, "decay_every_epochs", "optimizer", cfg.optimizer.decay_every_epochs);
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return PipelineConfig::from_json(j);
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << cfg.to_json().dump(2) << "\n";
}

}  // namespace tenslim
