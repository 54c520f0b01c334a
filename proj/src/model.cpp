#include "tenslim/model.hpp"

#include <cmath>

namespace tenslim {

std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Linear: return "linear";
    case OpKind::ReLU: return "relu";
    case OpKind::Tanh: return "tanh";
  }
  return "relu";
}

OpKind parse_op_kind(std::string_view s) {
  for (OpKind k : {OpKind::Conv2d, OpKind::Linear, OpKind::ReLU, OpKind::Tanh})
    if (to_string(k) == s) return k;
  throw Error(Errc::BadManifest, "unknown op kind '" + std::string(s) + "'");
}

Shape Op::weight_shape() const {
  if (kind == OpKind::Conv2d) return {out_ch, in_ch, kernel, kernel};
  if (kind == OpKind::Linear) return {out_ch, in_ch};
  return {};
}

DenseTensor<double> Op::effective_weight() const {
  if (const auto* dense = std::get_if<DenseTensor<double>>(&weight)) return *dense;
  return tenslim::effective_weight(std::get<LowRankSparseLayer<double>>(weight));
}

Index op_in_features(const Op& op, Index incoming) {
  switch (op.kind) {
    case OpKind::Conv2d: return op.in_ch * op.in_h * op.in_w;
    case OpKind::Linear: return op.in_ch;
    default: return incoming;
  }
}

Index op_out_features(const Op& op, Index incoming) {
  switch (op.kind) {
    case OpKind::Conv2d: return op.out_ch * op.out_h() * op.out_w();
    case OpKind::Linear: return op.out_ch;
    default: return incoming;
  }
}

std::vector<Index> Network::validate() const {
  std::vector<Index> widths;
  Index width = input_features();
  for (const Op& op : ops) {
    if (op_in_features(op, width) != width)
      throw Error(Errc::ShapeMismatch, "stage " + op.name + " expects " + std::to_string(op_in_features(op, width)) +
                                           " inputs, receives " + std::to_string(width));
    if (op.has_weight()) {
      if (op.kernel < 1 || op.out_h() < 1 || op.out_w() < 1)
        throw Error(Errc::ShapeMismatch, "stage " + op.name + " has an invalid kernel");
      const Shape ws = op.weight_shape();
      if (const auto* dense = std::get_if<DenseTensor<double>>(&op.weight)) {
        if (dense->shape() != ws) throw Error(Errc::ShapeMismatch, op.name + ": weight shape " + to_string(dense->shape()));
      } else {
        const auto& layer = std::get<LowRankSparseLayer<double>>(op.weight);
        if (layer.original_shape != ws) throw Error(Errc::ShapeMismatch, op.name + ": layer shape mismatch");
        tenslim::validate(layer);
      }
      if (op.bias.size() != op.out_ch) throw Error(Errc::ShapeMismatch, op.name + ": bias length mismatch");
    }
    widths.push_back(width);
    width = op_out_features(op, width);
  }
  if (width != classes)
    throw Error(Errc::ShapeMismatch, "network emits " + std::to_string(width) + " outputs for " +
                                         std::to_string(classes) + " classes");
  return widths;
}

Op* Network::find(std::string_view name) {
  for (Op& op : ops)
    if (op.name == name) return &op;
  return nullptr;
}

const Op* Network::find(std::string_view name) const {
  for (const Op& op : ops)
    if (op.name == name) return &op;
  return nullptr;
}

namespace {

// Columns of all patches of a batch: rows (c, ki, kj), columns (b, oh, ow).
Matrix<double> im2col(const Op& op, const Matrix<double>& x) {
  const Index k = op.kernel, oh = op.out_h(), ow = op.out_w(), p = oh * ow;
  Matrix<double> cols(op.in_ch * k * k, x.cols() * p);
  for (Index b = 0; b < x.cols(); ++b)
    for (Index c = 0; c < op.in_ch; ++c)
      for (Index ki = 0; ki < k; ++ki)
        for (Index kj = 0; kj < k; ++kj) {
          const Index row = (c * k + ki) * k + kj;
          for (Index i = 0; i < oh; ++i)
            for (Index j = 0; j < ow; ++j)
              cols(row, b * p + i * ow + j) = x((c * op.in_h + i + ki) * op.in_w + j + kj, b);
        }
  return cols;
}

void col2im_add(const Op& op, const Matrix<double>& dcols, Matrix<double>& dx) {
  const Index k = op.kernel, oh = op.out_h(), ow = op.out_w(), p = oh * ow;
  for (Index b = 0; b < dx.cols(); ++b)
    for (Index c = 0; c < op.in_ch; ++c)
      for (Index ki = 0; ki < k; ++ki)
        for (Index kj = 0; kj < k; ++kj) {
          const Index row = (c * k + ki) * k + kj;
          for (Index i = 0; i < oh; ++i)
            for (Index j = 0; j < ow; ++j)
              dx((c * op.in_h + i + ki) * op.in_w + j + kj, b) += dcols(row, b * p + i * ow + j);
        }
}

Matrix<double> weight_matrix(const Op& op, const DenseTensor<double>& w) {
  const Index out = op.out_ch;
  return Matrix<double>(w.as_matrix(out, w.numel() / out));
}

Matrix<double> conv_forward(const Op& op, const DenseTensor<double>& w, const Matrix<double>& x) {
  const Index p = op.out_h() * op.out_w();
  const Matrix<double> y = weight_matrix(op, w) * im2col(op, x);  // out_ch x (batch * p)
  Matrix<double> out(op.out_ch * p, x.cols());
  for (Index b = 0; b < x.cols(); ++b)
    for (Index o = 0; o < op.out_ch; ++o)
      out.col(b).segment(o * p, p) = y.row(o).segment(b * p, p).transpose().array() + op.bias[o];
  return out;
}

}  // namespace

Matrix<double> forward(const Network& net, const Matrix<double>& x, ForwardCache* cache) {
  if (x.rows() != net.input_features())
    throw Error(Errc::ShapeMismatch, "input has " + std::to_string(x.rows()) + " features, network expects " +
                                         std::to_string(net.input_features()));
  if (cache) {
    cache->inputs.clear();
    cache->weights.clear();
  }
  Matrix<double> h = x;
  for (const Op& op : net.ops) {
    DenseTensor<double> w;
    if (op.has_weight()) w = op.effective_weight();
    Matrix<double> next;
    switch (op.kind) {
      case OpKind::Conv2d:
        next = conv_forward(op, w, h);
        break;
      case OpKind::Linear:
        next = weight_matrix(op, w) * h;
        next.colwise() += op.bias;
        break;
      case OpKind::ReLU:
        next = h.cwiseMax(0.0);
        break;
      case OpKind::Tanh:
        next = h.array().tanh();
        break;
    }
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->weights.push_back(std::move(w));
    }
    h = std::move(next);
  }
  return h;
}

NetworkGradient backward(const Network& net, const ForwardCache& cache, const Matrix<double>& dlogits) {
  if (cache.inputs.size() != net.ops.size()) throw Error(Errc::ShapeMismatch, "forward cache does not match network");
  NetworkGradient grad;
  grad.ops.resize(net.ops.size());
  Matrix<double> dy = dlogits;
  for (std::size_t s = net.ops.size(); s-- > 0;) {
    const Op& op = net.ops[s];
    const Matrix<double>& x = cache.inputs[s];
    Matrix<double> dx;
    DenseTensor<double> dw;
    switch (op.kind) {
      case OpKind::Linear: {
        const Matrix<double> w = weight_matrix(op, cache.weights[s]);
        const Matrix<double> g = dy * x.transpose();  // out x in
        dw = DenseTensor<double>(op.weight_shape(), Eigen::Map<const Vector<double>>(RowMatrix<double>(g).data(), g.size()));
        grad.ops[s].bias = dy.rowwise().sum();
        if (s > 0) dx = w.transpose() * dy;
        break;
      }
      case OpKind::Conv2d: {
        const Index p = op.out_h() * op.out_w();
        Matrix<double> dyr(op.out_ch, x.cols() * p);
        for (Index b = 0; b < x.cols(); ++b)
          for (Index o = 0; o < op.out_ch; ++o) dyr.row(o).segment(b * p, p) = dy.col(b).segment(o * p, p).transpose();
        const Matrix<double> cols = im2col(op, x);
        const Matrix<double> g = dyr * cols.transpose();
        dw = DenseTensor<double>(op.weight_shape(), Eigen::Map<const Vector<double>>(RowMatrix<double>(g).data(), g.size()));
        grad.ops[s].bias = dyr.rowwise().sum();
        if (s > 0) {
          dx = Matrix<double>::Zero(x.rows(), x.cols());
          col2im_add(op, weight_matrix(op, cache.weights[s]).transpose() * dyr, dx);
        }
        break;
      }
      case OpKind::ReLU:
        dx = dy.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        break;
      case OpKind::Tanh:
        dx = dy.array() * (1.0 - x.array().tanh().square());
        break;
    }
    if (op.has_weight()) {
      if (!dw.data().allFinite()) throw Error(Errc::NonFiniteGradient, "non-finite gradient at " + op.name);
      if (op.is_lrs())
        grad.ops[s].layer = backprop(std::get<LowRankSparseLayer<double>>(op.weight), dw);
      else
        grad.ops[s].dense = std::move(dw);
    }
    dy = std::move(dx);
  }
  return grad;
}

std::vector<ParamRef> parameters(Network& net) {
  std::vector<ParamRef> out;
  for (Op& op : net.ops) {
    if (!op.has_weight()) continue;
    if (auto* dense = std::get_if<DenseTensor<double>>(&op.weight)) {
      out.push_back({op.name + ".weight", Eigen::Map<Vector<double>>(dense->data().data(), dense->numel()), nullptr});
    } else {
      auto& layer = std::get<LowRankSparseLayer<double>>(op.weight);
      if (layer.low_rank) {
        auto arrays = parameter_arrays(*layer.low_rank);
        for (std::size_t k = 0; k < arrays.size(); ++k)
          out.push_back({op.name + ".L." + std::to_string(k), arrays[k], nullptr});
      }
      if (layer.sparse)
        out.push_back({op.name + ".S", Eigen::Map<Vector<double>>(layer.sparse->data().data(), layer.sparse->numel()),
                       layer.mask ? &*layer.mask : nullptr});
    }
    out.push_back({op.name + ".bias", Eigen::Map<Vector<double>>(op.bias.data(), op.bias.size()), nullptr});
  }
  return out;
}

std::vector<Eigen::Map<Vector<double>>> gradient_arrays(const Network& net, NetworkGradient& grad) {
  if (grad.ops.size() != net.ops.size()) throw Error(Errc::ShapeMismatch, "gradient does not match network");
  std::vector<Eigen::Map<Vector<double>>> out;
  for (std::size_t s = 0; s < net.ops.size(); ++s) {
    const Op& op = net.ops[s];
    if (!op.has_weight()) continue;
    OpGradient& g = grad.ops[s];
    if (op.is_lrs()) {
      const auto& layer = std::get<LowRankSparseLayer<double>>(op.weight);
      if (!g.layer) throw Error(Errc::ShapeMismatch, op.name + ": missing layer gradient");
      if (layer.low_rank) {
        if (!g.layer->low_rank) throw Error(Errc::ShapeMismatch, op.name + ": missing low-rank gradient");
        for (auto& m : parameter_arrays(*g.layer->low_rank)) out.push_back(m);
      }
      if (layer.sparse) {
        if (!g.layer->sparse) throw Error(Errc::ShapeMismatch, op.name + ": missing sparse gradient");
        out.emplace_back(g.layer->sparse->data().data(), g.layer->sparse->numel());
      }
    } else {
      if (!g.dense) throw Error(Errc::ShapeMismatch, op.name + ": missing weight gradient");
      out.emplace_back(g.dense->data().data(), g.dense->numel());
    }
    out.emplace_back(g.bias.data(), g.bias.size());
  }
  return out;
}

Vector<Index> predict(const Network& net, const Matrix<double>& x) {
  const Matrix<double> logits = forward(net, x);
  Vector<Index> out(logits.cols());
  for (Index b = 0; b < logits.cols(); ++b) logits.col(b).maxCoeff(&out[b]);
  return out;
}

double accuracy(const Network& net, const Matrix<double>& x, std::span<const Index> labels) {
  if (static_cast<Index>(labels.size()) != x.cols()) throw Error(Errc::ShapeMismatch, "label count mismatch");
  if (labels.empty()) return 0.0;
  const Vector<Index> pred = predict(net, x);
  Index hits = 0;
  for (Index b = 0; b < pred.size(); ++b) hits += pred[b] == labels[static_cast<std::size_t>(b)];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

Op weighted(OpKind kind, std::string name, Index in_ch, Index out_ch, Index kernel, Index in_h, Index in_w,
            std::mt19937_64& rng) {
  Op op;
  op.kind = kind;
  op.name = std::move(name);
  op.in_ch = in_ch;
  op.out_ch = out_ch;
  op.kernel = kernel;
  op.in_h = in_h;
  op.in_w = in_w;
  DenseTensor<double> w = random_normal<double>(op.weight_shape(), rng);
  const double fan_in = static_cast<double>(w.numel() / out_ch);
  w.data() *= std::sqrt(2.0 / fan_in);
  op.weight = std::move(w);
  op.bias = Vector<double>::Zero(out_ch);
  return op;
}

Op activation(OpKind kind, std::string name) {
  Op op;
  op.kind = kind;
  op.name = std::move(name);
  op.compressible = false;
  return op;
}

}  // namespace

Network reference_network(const ReferenceSpec& spec, std::mt19937_64& rng) {
  if (spec.input_shape.size() != 3) throw Error(Errc::ShapeMismatch, "reference network expects (C, H, W) inputs");
  const Index c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  if (h < 3 || w < 3) throw Error(Errc::ShapeMismatch, "reference network needs at least 3x3 inputs");
  Network net;
  net.input_shape = spec.input_shape;
  net.classes = spec.classes;
  net.ops.push_back(weighted(OpKind::Conv2d, "conv1", c, spec.conv_channels, 3, h, w, rng));
  net.ops.push_back(activation(OpKind::ReLU, "relu1"));
  net.ops.push_back(weighted(OpKind::Conv2d, "conv2", spec.conv_channels, spec.pointwise_channels, 1, h - 2, w - 2, rng));
  net.ops.push_back(activation(OpKind::ReLU, "relu2"));
  const Index flat = spec.pointwise_channels * (h - 2) * (w - 2);
  net.ops.push_back(weighted(OpKind::Linear, "fc1", flat, spec.hidden, 1, 1, 1, rng));
  net.ops.push_back(activation(OpKind::ReLU, "relu3"));
  Op fc2 = weighted(OpKind::Linear, "fc2", spec.hidden, spec.classes, 1, 1, 1, rng);
  fc2.compressible = false;
  net.ops.push_back(std::move(fc2));
  net.validate();
  return net;
}

}  // namespace tenslim
