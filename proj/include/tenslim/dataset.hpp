#pragma once

// Labelled example sets for the reference classifier. Examples are columns.

#include <cstdint>
#include <vector>

#include "tenslim/bundle.hpp"

namespace tenslim {

struct Dataset {
  Shape input_shape;
  Index classes = 0;
  Matrix<double> train_x;  // features x examples
  std::vector<Index> train_y;
  Matrix<double> val_x;
  std::vector<Index> val_y;

  void validate() const;
};

/// Gaussian clusters in input space. Each class owns `clusters_per_class`
/// random prototype images; examples are a prototype plus isotropic noise.
struct SyntheticSpec {
  Shape input_shape{4, 8, 8};
  Index classes = 10;
  Index clusters_per_class = 4;
  Index train_per_class = 200;
  Index val_per_class = 100;
  double noise = 0.6;
  std::uint64_t seed = 0;
};

Dataset make_synthetic(const SyntheticSpec& spec);

/// Stored as a WeightBundle with entries train.x / train.y / val.x / val.y
/// (examples as rows) and the input shape and class count in the metadata.
WeightBundle dataset_to_bundle(const Dataset& data);
Dataset dataset_from_bundle(const WeightBundle& bundle);

}  // namespace tenslim
