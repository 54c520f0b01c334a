#include "tenslim/dataset.hpp"

#include <cmath>
#include <random>

namespace tenslim {

void Dataset::validate() const {
  validate_shape(input_shape);
  if (classes < 2) throw Error(Errc::BadManifest, "dataset needs at least two classes");
  const Index d = numel(input_shape);
  if (train_x.rows() != d || val_x.rows() != d) throw Error(Errc::ShapeMismatch, "example width does not match input shape");
  if (train_x.cols() != static_cast<Index>(train_y.size()) || val_x.cols() != static_cast<Index>(val_y.size()))
    throw Error(Errc::ShapeMismatch, "example and label counts differ");
  if (train_y.empty()) throw Error(Errc::EmptyInput, "dataset has no training examples");
  for (const auto* labels : {&train_y, &val_y})
    for (Index y : *labels)
      if (y < 0 || y >= classes) throw Error(Errc::BadManifest, "label " + std::to_string(y) + " out of range");
  if (!train_x.allFinite() || !val_x.allFinite()) throw Error(Errc::BadManifest, "non-finite example values");
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  validate_shape(spec.input_shape);
  if (spec.classes < 2 || spec.clusters_per_class < 1 || spec.train_per_class < 1 || spec.val_per_class < 0)
    throw Error(Errc::ConfigError, "invalid synthetic dataset sizes");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d = numel(spec.input_shape);
  const Index protos = spec.classes * spec.clusters_per_class;
  Matrix<double> prototypes(d, protos);
  for (Index j = 0; j < protos; ++j)
    for (Index i = 0; i < d; ++i) prototypes(i, j) = normal(rng);
  prototypes /= std::sqrt(static_cast<double>(d));

  auto sample = [&](Index per_class, Matrix<double>& x, std::vector<Index>& y) {
    x.resize(d, per_class * spec.classes);
    y.clear();
    std::uniform_int_distribution<Index> pick(0, spec.clusters_per_class - 1);
    Index col = 0;
    for (Index n = 0; n < per_class; ++n)
      for (Index c = 0; c < spec.classes; ++c) {
        const Index p = c * spec.clusters_per_class + pick(rng);
        for (Index i = 0; i < d; ++i)
          x(i, col) = prototypes(i, p) + spec.noise * normal(rng) / std::sqrt(static_cast<double>(d));
        y.push_back(c);
        ++col;
      }
  };

  Dataset data;
  data.input_shape = spec.input_shape;
  data.classes = spec.classes;
  sample(spec.train_per_class, data.train_x, data.train_y);
  sample(spec.val_per_class, data.val_x, data.val_y);
  // Unit-scale features: prototypes have norm ~1, so scale to per-feature variance ~1.
  const double scale = std::sqrt(static_cast<double>(d) / (1.0 + spec.noise * spec.noise));
  data.train_x *= scale;
  data.val_x *= scale;
  return data;
}

namespace {

DenseTensor<double> rows_of(const Matrix<double>& x) {
  DenseTensor<double> t({std::max<Index>(x.cols(), 1), x.rows()});
  if (x.cols() > 0) t.as_matrix(x.cols(), x.rows()) = x.transpose();
  return t;
}

DenseTensor<double> labels_of(const std::vector<Index>& y) {
  DenseTensor<double> t({std::max<Index>(static_cast<Index>(y.size()), 1)});
  for (std::size_t i = 0; i < y.size(); ++i) t[static_cast<Index>(i)] = static_cast<double>(y[i]);
  return t;
}

}  // namespace

WeightBundle dataset_to_bundle(const Dataset& data) {
  data.validate();
  WeightBundle b;
  b.metadata["kind"] = "dataset";
  b.metadata["input_shape"] = data.input_shape;
  b.metadata["classes"] = data.classes;
  b.metadata["train_count"] = data.train_y.size();
  b.metadata["val_count"] = data.val_y.size();
  b.add("train.x", Role::Dense, rows_of(data.train_x), DType::F64);
  b.add("train.y", Role::Dense, labels_of(data.train_y), DType::F32);
  b.add("val.x", Role::Dense, rows_of(data.val_x), DType::F64);
  b.add("val.y", Role::Dense, labels_of(data.val_y), DType::F32);
  return b;
}

Dataset dataset_from_bundle(const WeightBundle& bundle) {
  if (bundle.metadata.value("kind", "") != "dataset") throw Error(Errc::BadManifest, "bundle is not a dataset");
  Dataset data;
  try {
    data.input_shape = bundle.metadata.at("input_shape").get<Shape>();
    data.classes = bundle.metadata.at("classes").get<Index>();
    const auto train_n = bundle.metadata.at("train_count").get<Index>();
    const auto val_n = bundle.metadata.at("val_count").get<Index>();
    const Index d = numel(data.input_shape);
    auto load = [&](const std::string& split, Index n, Matrix<double>& x, std::vector<Index>& y) {
      const BundleEntry& ex = bundle.at(split + ".x");
      const BundleEntry& ey = bundle.at(split + ".y");
      if (ex.shape != Shape{std::max<Index>(n, 1), d})
        throw Error(Errc::BadManifest, split + ".x has shape " + to_string(ex.shape));
      x.resize(d, n);
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < d; ++i) x(i, j) = ex.values[static_cast<std::size_t>(j * d + i)];
      y.clear();
      for (Index j = 0; j < n; ++j) {
        const double v = ey.values.at(static_cast<std::size_t>(j));
        if (v != std::floor(v)) throw Error(Errc::BadManifest, split + ".y holds a non-integer label");
        y.push_back(static_cast<Index>(v));
      }
    };
    load("train", train_n, data.train_x, data.train_y);
    load("val", val_n, data.val_x, data.val_y);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadManifest, std::string("dataset metadata: ") + e.what());
  } catch (const std::out_of_range&) {
    throw Error(Errc::BadManifest, "dataset labels are shorter than declared");
  }
  data.validate();
  return data;
}

}  // namespace tenslim
