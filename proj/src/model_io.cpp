#include "tenslim/model_io.hpp"

namespace tenslim {

namespace {

using nlohmann::json;

Role role_for(Format f) {
  switch (f) {
    case Format::CP: return Role::CP;
    case Format::Tucker: return Role::Tucker;
    case Format::TT: return Role::TT;
    case Format::TTM: return Role::TTM;
  }
  return Role::TT;
}

DenseTensor<double> matrix_tensor(const Matrix<double>& m) { return DenseTensor<double>::FromMatrix(m); }

Matrix<double> tensor_matrix(const BundleEntry& e) {
  if (e.shape.size() != 2) throw Error(Errc::BadManifest, e.name + " should be a matrix");
  return e.tensor().as_matrix(e.shape[0], e.shape[1]);
}

std::vector<DenseTensor<double>> factor_parts(const FactorizedTensor<double>& f) {
  std::vector<DenseTensor<double>> parts;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CPFactors<double>>) {
          for (const auto& u : v.factors) parts.push_back(matrix_tensor(u));
        } else if constexpr (std::is_same_v<T, TuckerFactors<double>>) {
          parts.push_back(v.core);
          for (const auto& u : v.factors) parts.push_back(matrix_tensor(u));
        } else {
          parts = v.cores;
        }
      },
      f);
  return parts;
}

FactorizedTensor<double> assemble(Format format, std::vector<const BundleEntry*> parts) {
  switch (format) {
    case Format::CP: {
      CPFactors<double> f;
      for (const auto* e : parts) f.factors.push_back(tensor_matrix(*e));
      validate(f);
      return f;
    }
    case Format::Tucker: {
      if (parts.empty()) throw Error(Errc::BadManifest, "Tucker layer without a core");
      TuckerFactors<double> f;
      f.core = parts.front()->tensor();
      for (std::size_t k = 1; k < parts.size(); ++k) f.factors.push_back(tensor_matrix(*parts[k]));
      validate(f);
      return f;
    }
    case Format::TT: {
      TTCores<double> f;
      for (const auto* e : parts) f.cores.push_back(e->tensor());
      validate(f);
      return f;
    }
    case Format::TTM: {
      TTMCores<double> f;
      for (const auto* e : parts) f.cores.push_back(e->tensor());
      validate(f);
      return f;
    }
  }
  throw Error(Errc::BadManifest, "unknown format");
}

}  // namespace

json append_layer(WeightBundle& bundle, const std::string& prefix, const LowRankSparseLayer<double>& layer, DType dtype) {
  validate(layer);
  json rec;
  rec["storage"] = "lrs";
  rec["mode"] = to_string(layer.mode);
  rec["original_shape"] = layer.original_shape;
  rec["fold_shape"] = layer.fold_shape;
  if (layer.low_rank) {
    const Format f = format_of(*layer.low_rank);
    rec["format"] = to_string(f);
    rec["ranks"] = ranks_of(*layer.low_rank);
    const auto parts = factor_parts(*layer.low_rank);
    rec["parts"] = parts.size();
    for (std::size_t k = 0; k < parts.size(); ++k)
      bundle.add(prefix + ".L." + std::to_string(k), role_for(f), parts[k], dtype,
                 {{"layer", prefix}, {"part", k}, {"ranks", rec["ranks"]}});
  }
  if (layer.sparse) {
    bundle.add(prefix + ".S", Role::Sparse, *layer.sparse, dtype, {{"layer", prefix}});
    bundle.add(prefix + ".M", Role::Mask, DenseTensor<double>(layer.mask->shape(), layer.mask->as<double>()), DType::F32,
               {{"layer", prefix}, {"sparse", prefix + ".S"}});
  }
  return rec;
}

LowRankSparseLayer<double> read_layer(const WeightBundle& bundle, const std::string& prefix, const json& rec) {
  LowRankSparseLayer<double> layer;
  try {
    layer.name = prefix;
    layer.mode = parse_mode(rec.at("mode").get<std::string>());
    layer.original_shape = rec.at("original_shape").get<Shape>();
    layer.fold_shape = rec.at("fold_shape").get<Shape>();
    if (rec.contains("format")) {
      const Format f = parse_format(rec.at("format").get<std::string>());
      std::vector<const BundleEntry*> parts;
      const auto count = rec.at("parts").get<std::size_t>();
      for (std::size_t k = 0; k < count; ++k) {
        const BundleEntry& e = bundle.at(prefix + ".L." + std::to_string(k));
        if (e.role != role_for(f)) throw Error(Errc::BadManifest, e.name + " has role " + std::string(to_string(e.role)));
        parts.push_back(&e);
      }
      layer.low_rank = assemble(f, parts);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::BadManifest, "layer record for " + prefix + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw Error(Errc::BadManifest, e.what());
    throw;
  }
  if (const BundleEntry* s = bundle.find(prefix + ".S")) {
    const BundleEntry& m = bundle.at(prefix + ".M");
    layer.sparse = s->tensor();
    Mask::Bits bits(m.numel());
    for (Index i = 0; i < m.numel(); ++i) bits[i] = m.values[static_cast<std::size_t>(i)] != 0.0;
    layer.mask = Mask(m.shape, bits);
  }
  validate(layer);
  return layer;
}

WeightBundle network_to_bundle(const Network& net, DType dtype) {
  net.validate();
  WeightBundle b;
  b.metadata["kind"] = "model";
  json model;
  model["input_shape"] = net.input_shape;
  model["classes"] = net.classes;
  model["ops"] = json::array();
  for (const Op& op : net.ops) {
    json o;
    o["kind"] = to_string(op.kind);
    o["name"] = op.name;
    if (op.has_weight()) {
      o["in_ch"] = op.in_ch;
      o["out_ch"] = op.out_ch;
      o["kernel"] = op.kernel;
      o["in_h"] = op.in_h;
      o["in_w"] = op.in_w;
      o["compressible"] = op.compressible;
      if (const auto* dense = std::get_if<DenseTensor<double>>(&op.weight)) {
        o["weight"] = {{"storage", "dense"}};
        b.add(op.name + ".weight", Role::Dense, *dense, dtype, {{"layer", op.name}});
      } else {
        o["weight"] = append_layer(b, op.name, std::get<LowRankSparseLayer<double>>(op.weight), dtype);
      }
      b.add(op.name + ".bias", Role::Dense, DenseTensor<double>(Shape{op.out_ch}, op.bias), dtype, {{"layer", op.name}});
    }
    model["ops"].push_back(o);
  }
  b.metadata["model"] = model;
  return b;
}

Network network_from_bundle(const WeightBundle& bundle) {
  if (bundle.metadata.value("kind", "") != "model") throw Error(Errc::BadManifest, "bundle does not describe a model");
  Network net;
  try {
    const json& model = bundle.metadata.at("model");
    net.input_shape = model.at("input_shape").get<Shape>();
    net.classes = model.at("classes").get<Index>();
    for (const json& o : model.at("ops")) {
      Op op;
      op.kind = parse_op_kind(o.at("kind").get<std::string>());
      op.name = o.at("name").get<std::string>();
      if (op.has_weight()) {
        op.in_ch = o.at("in_ch").get<Index>();
        op.out_ch = o.at("out_ch").get<Index>();
        op.kernel = o.at("kernel").get<Index>();
        op.in_h = o.at("in_h").get<Index>();
        op.in_w = o.at("in_w").get<Index>();
        op.compressible = o.at("compressible").get<bool>();
        const json& w = o.at("weight");
        if (w.at("storage").get<std::string>() == "dense") {
          op.weight = bundle.at(op.name + ".weight").tensor();
        } else {
          op.weight = read_layer(bundle, op.name, w);
        }
        const BundleEntry& bias = bundle.at(op.name + ".bias");
        op.bias = Eigen::Map<const Vector<double>>(bias.values.data(), static_cast<Index>(bias.values.size()));
      } else {
        op.compressible = false;
      }
      net.ops.push_back(std::move(op));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::BadManifest, std::string("model metadata: ") + e.what());
  }
  net.validate();
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path, DType dtype) {
  write_bundle(network_to_bundle(net, dtype), path);
}

Network load_network(const std::filesystem::path& path) { return network_from_bundle(read_bundle(path)); }

}  // namespace tenslim
