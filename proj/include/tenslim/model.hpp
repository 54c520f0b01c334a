#pragma once

// A small feed-forward classifier whose weights may be dense or low-rank +
// sparse. Activations are column batches: features x batch, with each
// column holding one example flattened row-major (channels, height, width).

#include <random>
#include <string>
#include <variant>
#include <vector>

#include "tenslim/lrs.hpp"

namespace tenslim {

enum class OpKind { Conv2d, Linear, ReLU, Tanh };

std::string_view to_string(OpKind k);
OpKind parse_op_kind(std::string_view s);

using WeightValue = std::variant<DenseTensor<double>, LowRankSparseLayer<double>>;

/// One network stage. Conv2d is a valid (unpadded, stride 1) convolution with
/// weight (out_ch, in_ch, k, k); Linear has weight (out, in) where in/out are
/// stored in in_ch/out_ch.
struct Op {
  OpKind kind = OpKind::ReLU;
  std::string name;
  Index in_ch = 0;
  Index out_ch = 0;
  Index kernel = 1;
  Index in_h = 1;
  Index in_w = 1;
  bool compressible = true;
  WeightValue weight;
  Vector<double> bias;

  bool has_weight() const { return kind == OpKind::Conv2d || kind == OpKind::Linear; }
  bool is_lrs() const { return std::holds_alternative<LowRankSparseLayer<double>>(weight); }
  Shape weight_shape() const;
  Index out_h() const { return in_h - kernel + 1; }
  Index out_w() const { return in_w - kernel + 1; }
  DenseTensor<double> effective_weight() const;
};

struct Network {
  Shape input_shape;
  Index classes = 0;
  std::vector<Op> ops;

  Index input_features() const { return numel(input_shape); }
  /// Checks that consecutive stages agree on feature counts and that the last
  /// stage produces `classes` outputs. Returns the per-stage input widths.
  std::vector<Index> validate() const;
  Op* find(std::string_view name);
  const Op* find(std::string_view name) const;
};

/// Operand widths of an op: number of input and output features per example.
Index op_in_features(const Op& op, Index incoming);
Index op_out_features(const Op& op, Index incoming);

struct ForwardCache {
  std::vector<Matrix<double>> inputs;            // input of every stage
  std::vector<DenseTensor<double>> weights;      // effective weight per stage (empty for activations)
};

/// Logits (classes x batch). Weights are reconstructed on every call.
Matrix<double> forward(const Network& net, const Matrix<double>& x, ForwardCache* cache = nullptr);

struct OpGradient {
  std::optional<DenseTensor<double>> dense;      // gradient of a dense weight
  std::optional<LayerGradient<double>> layer;    // gradient of an LRS weight's parts
  Vector<double> bias;
};

struct NetworkGradient {
  std::vector<OpGradient> ops;
};

/// Gradients of a loss w.r.t. every trainable array, given dLoss/dLogits.
NetworkGradient backward(const Network& net, const ForwardCache& cache, const Matrix<double>& dlogits);

/// Views over every trainable array in a fixed order: per weighted stage, the
/// weight arrays (dense weight, or the factors of L then S), then the bias.
struct ParamRef {
  std::string name;
  Eigen::Map<Vector<double>> values;
  const Mask* frozen = nullptr;  // for S: entries where the mask is 0 never change
};
std::vector<ParamRef> parameters(Network& net);

/// Gradient arrays aligned with parameters(); missing parts are returned as
/// zero-length maps only if the network and gradient disagree (which throws).
std::vector<Eigen::Map<Vector<double>>> gradient_arrays(const Network& net, NetworkGradient& grad);

Vector<Index> predict(const Network& net, const Matrix<double>& x);
double accuracy(const Network& net, const Matrix<double>& x, std::span<const Index> labels);

/// conv1 (3x3) -> relu -> conv2 (1x1) -> relu -> fc1 -> relu -> fc2. The last
/// layer is the classifier and is not compressible.
struct ReferenceSpec {
  Shape input_shape{4, 8, 8};
  Index classes = 10;
  Index conv_channels = 16;
  Index pointwise_channels = 16;
  Index hidden = 64;
};
Network reference_network(const ReferenceSpec& spec, std::mt19937_64& rng);

}  // namespace tenslim
