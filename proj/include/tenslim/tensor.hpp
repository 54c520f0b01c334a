#pragma once

// Dense tensor storage and the basic multilinear operations everything else is
// built from. Linearization is row-major (last index fastest) throughout, and
// modes are numbered from 0.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tenslim/errors.hpp"

namespace tenslim {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t n = 0; n < shape.size(); ++n) {
    if (n) out += ",";
    out += std::to_string(shape[n]);
  }
  return out + ")";
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty()) throw Error(Errc::ShapeMismatch, "tensor order must be >= 1");
  for (Index dim : shape)
    if (dim < 1) throw Error(Errc::ShapeMismatch, "mode sizes must be >= 1, got " + to_string(shape));
}

inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t n = shape.size(); n-- > 1;) strides[n - 1] = strides[n] * shape[n];
  return strides;
}

inline Shape concat(const Shape& a, const Shape& b) {
  Shape out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// d-way real array with an explicit shape; data is the row-major flattening.
template <typename Scalar>
class DenseTensor {
 public:
  using scalar_type = Scalar;
  using VectorType = Vector<Scalar>;

  DenseTensor() : shape_{1}, data_(VectorType::Zero(1)) {}

  explicit DenseTensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_ = VectorType::Zero(tenslim::numel(shape_));
  }

  DenseTensor(Shape shape, VectorType data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (tenslim::numel(shape_) != data_.size())
      throw Error(Errc::ShapeMismatch, "shape " + to_string(shape_) + " needs " +
                                           std::to_string(tenslim::numel(shape_)) + " values, got " +
                                           std::to_string(data_.size()));
  }

  static DenseTensor Zero(Shape shape) { return DenseTensor(std::move(shape)); }

  static DenseTensor Constant(Shape shape, Scalar value) {
    DenseTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  /// Order-2 tensor holding the entries of `m` (any storage order).
  template <typename Derived>
  static DenseTensor FromMatrix(const Eigen::MatrixBase<Derived>& m) {
    DenseTensor t(Shape{m.rows(), m.cols()});
    Eigen::Map<RowMatrix<Scalar>>(t.data_.data(), m.rows(), m.cols()) = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index order() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index n) const { return shape_.at(static_cast<std::size_t>(n)); }
  Index numel() const { return data_.size(); }

  const VectorType& data() const { return data_; }
  VectorType& data() { return data_; }

  Scalar operator[](Index flat) const { return data_[flat]; }
  Scalar& operator[](Index flat) { return data_[flat]; }

  Index flat_index(std::span<const Index> index) const {
    if (static_cast<std::size_t>(index.size()) != shape_.size())
      throw Error(Errc::IndexOutOfBounds, "index has " + std::to_string(index.size()) +
                                              " entries for an order-" + std::to_string(order()) + " tensor");
    Index flat = 0;
    for (std::size_t n = 0; n < shape_.size(); ++n) {
      if (index[n] < 0 || index[n] >= shape_[n])
        throw Error(Errc::IndexOutOfBounds, "index out of range for shape " + to_string(shape_));
      flat = flat * shape_[n] + index[n];
    }
    return flat;
  }

  Scalar operator()(std::span<const Index> index) const { return data_[flat_index(index)]; }
  Scalar& operator()(std::span<const Index> index) { return data_[flat_index(index)]; }
  Scalar operator()(std::initializer_list<Index> index) const {
    return (*this)(std::span<const Index>(index.begin(), index.size()));
  }

  DenseTensor reshaped(Shape shape) const { return DenseTensor(std::move(shape), data_); }

  /// Row-major view of the data as a rows x cols matrix.
  Eigen::Map<const RowMatrix<Scalar>> as_matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) throw Error(Errc::ShapeMismatch, "matrix view does not cover the tensor");
    return Eigen::Map<const RowMatrix<Scalar>>(data_.data(), rows, cols);
  }
  Eigen::Map<RowMatrix<Scalar>> as_matrix(Index rows, Index cols) {
    if (rows * cols != numel()) throw Error(Errc::ShapeMismatch, "matrix view does not cover the tensor");
    return Eigen::Map<RowMatrix<Scalar>>(data_.data(), rows, cols);
  }

  template <typename Other>
  DenseTensor<Other> cast() const {
    return DenseTensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  VectorType data_;
};

/// Binary tensor selecting entries; 1 keeps, 0 removes.
class Mask {
 public:
  using Bits = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

  Mask() : shape_{1}, bits_(Bits::Ones(1)) {}

  Mask(Shape shape, Bits bits) : shape_(std::move(shape)), bits_(std::move(bits)) {
    validate_shape(shape_);
    if (tenslim::numel(shape_) != bits_.size())
      throw Error(Errc::ShapeMismatch, "mask bits do not match shape " + to_string(shape_));
    if ((bits_ > 1).any()) throw Error(Errc::ShapeMismatch, "mask entries must be 0 or 1");
  }

  static Mask Ones(Shape shape) {
    Index n = tenslim::numel(shape);
    return Mask(std::move(shape), Bits::Ones(n));
  }
  static Mask Zeros(Shape shape) {
    Index n = tenslim::numel(shape);
    return Mask(std::move(shape), Bits::Zero(n));
  }

  const Shape& shape() const { return shape_; }
  Index numel() const { return bits_.size(); }
  const Bits& bits() const { return bits_; }
  Bits& bits() { return bits_; }
  bool operator[](Index flat) const { return bits_[flat] != 0; }

  Index count_ones() const { return bits_.template cast<Index>().sum(); }
  double sparsity() const { return 1.0 - static_cast<double>(count_ones()) / static_cast<double>(numel()); }

  Mask complement() const { return Mask(shape_, (Bits::Ones(bits_.size()) - bits_).eval()); }
  Mask reshaped(Shape shape) const { return Mask(std::move(shape), bits_); }

  template <typename Scalar>
  auto as() const {
    return bits_.template cast<Scalar>().matrix();
  }

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.shape_ == b.shape_ && (a.bits_ == b.bits_).all();
  }

 private:
  Shape shape_;
  Bits bits_;
};

// ---------------------------------------------------------------------------
// Folding and unfolding
// ---------------------------------------------------------------------------

/// Relabels the entries of a matrix as a tensor of `target` shape. For a target
/// (I_1..I_d, J_1..J_d) with prod I = rows, entry (i, j) lands at the index
/// whose first d digits spell i and last d digits spell j.
template <typename Scalar>
DenseTensor<Scalar> fold(const DenseTensor<Scalar>& matrix, const Shape& target) {
  if (matrix.order() != 2) throw Error(Errc::ShapeMismatch, "fold expects an order-2 tensor");
  if (numel(target) != matrix.numel())
    throw Error(Errc::ShapeMismatch, "cannot fold " + to_string(matrix.shape()) + " into " + to_string(target));
  return matrix.reshaped(target);
}

/// Folds to the paired-index order-2d layout used by the TTM format.
template <typename Scalar>
DenseTensor<Scalar> fold_paired(const DenseTensor<Scalar>& matrix, const Shape& row_dims, const Shape& col_dims) {
  if (matrix.order() != 2 || numel(row_dims) != matrix.dim(0) || numel(col_dims) != matrix.dim(1))
    throw Error(Errc::ShapeMismatch, "row/col factorization " + to_string(row_dims) + "/" + to_string(col_dims) +
                                         " does not match " + to_string(matrix.shape()));
  return matrix.reshaped(concat(row_dims, col_dims));
}

/// Inverse of fold: views a tensor as rows x (numel / rows).
template <typename Scalar>
DenseTensor<Scalar> unfold_to_matrix(const DenseTensor<Scalar>& t, Index rows) {
  if (rows < 1 || t.numel() % rows != 0)
    throw Error(Errc::ShapeMismatch, "cannot view " + to_string(t.shape()) + " with " + std::to_string(rows) + " rows");
  return t.reshaped(Shape{rows, t.numel() / rows});
}

namespace detail {

inline void check_mode(Index order, Index n) {
  if (n < 0 || n >= order)
    throw Error(Errc::InvalidMode, "mode " + std::to_string(n) + " for an order-" + std::to_string(order) + " tensor");
}

// Splits a shape around mode n into (prod before, I_n, prod after).
inline std::array<Index, 3> split_at(const Shape& shape, Index n) {
  Index before = 1, after = 1;
  for (Index m = 0; m < n; ++m) before *= shape[static_cast<std::size_t>(m)];
  for (std::size_t m = static_cast<std::size_t>(n) + 1; m < shape.size(); ++m) after *= shape[m];
  return {before, shape[static_cast<std::size_t>(n)], after};
}

/// Mode-n product that always keeps mode n, even when the new size is 1.
template <typename Scalar, typename Derived>
DenseTensor<Scalar> mode_product_keep(const DenseTensor<Scalar>& t, const Eigen::MatrixBase<Derived>& u, Index n) {
  check_mode(t.order(), n);
  const auto [before, size, after] = split_at(t.shape(), n);
  if (u.cols() != size)
    throw Error(Errc::ShapeMismatch, "mode-" + std::to_string(n) + " size " + std::to_string(size) +
                                         " does not match matrix with " + std::to_string(u.cols()) + " columns");
  Shape shape = t.shape();
  shape[static_cast<std::size_t>(n)] = u.rows();
  DenseTensor<Scalar> out(shape);
  const Matrix<Scalar> um = u;
  for (Index p = 0; p < before; ++p) {
    Eigen::Map<const RowMatrix<Scalar>> slab(t.data().data() + p * size * after, size, after);
    Eigen::Map<RowMatrix<Scalar>> dst(out.data().data() + p * u.rows() * after, u.rows(), after);
    dst.noalias() = um * slab;
  }
  return out;
}

}  // namespace detail

/// Mode-n unfolding: an I_n x (numel / I_n) matrix whose columns are the mode-n
/// fibers, ordered by the remaining indices in row-major order.
template <typename Scalar>
Matrix<Scalar> unfold(const DenseTensor<Scalar>& t, Index n) {
  detail::check_mode(t.order(), n);
  const auto [before, size, after] = detail::split_at(t.shape(), n);
  Matrix<Scalar> out(size, before * after);
  for (Index p = 0; p < before; ++p)
    out.middleCols(p * after, after) =
        Eigen::Map<const RowMatrix<Scalar>>(t.data().data() + p * size * after, size, after);
  return out;
}

/// Inverse of unfold for a tensor of the given shape.
template <typename Derived>
DenseTensor<typename Derived::Scalar> fold_back(const Eigen::MatrixBase<Derived>& m, Index n, const Shape& shape) {
  using Scalar = typename Derived::Scalar;
  validate_shape(shape);
  detail::check_mode(static_cast<Index>(shape.size()), n);
  const auto [before, size, after] = detail::split_at(shape, n);
  if (m.rows() != size || m.cols() != before * after)
    throw Error(Errc::ShapeMismatch, "unfolding does not match shape " + to_string(shape));
  DenseTensor<Scalar> out(shape);
  for (Index p = 0; p < before; ++p)
    Eigen::Map<RowMatrix<Scalar>>(out.data().data() + p * size * after, size, after) = m.middleCols(p * after, after);
  return out;
}

/// Mode-n product t x_n u with u of shape J x I_n. When J == 1 mode n is
/// dropped from the result (an order-1 input stays a length-1 vector).
template <typename Scalar, typename Derived>
DenseTensor<Scalar> mode_n_product(const DenseTensor<Scalar>& t, const Eigen::MatrixBase<Derived>& u, Index n) {
  DenseTensor<Scalar> out = detail::mode_product_keep(t, u, n);
  if (u.rows() != 1 || t.order() == 1) return out;
  Shape shape = out.shape();
  shape.erase(shape.begin() + n);
  return out.reshaped(std::move(shape));
}

/// Transposes the modes: result mode k is input mode perm[k].
template <typename Scalar>
DenseTensor<Scalar> permute(const DenseTensor<Scalar>& t, const std::vector<Index>& perm) {
  const std::size_t d = t.shape().size();
  if (perm.size() != d) throw Error(Errc::InvalidMode, "permutation length does not match tensor order");
  std::vector<bool> seen(d, false);
  for (Index p : perm) {
    detail::check_mode(static_cast<Index>(d), p);
    if (seen[static_cast<std::size_t>(p)]) throw Error(Errc::InvalidMode, "permutation repeats a mode");
    seen[static_cast<std::size_t>(p)] = true;
  }
  const Shape src_strides = row_major_strides(t.shape());
  Shape shape(d), strides(d);
  for (std::size_t k = 0; k < d; ++k) {
    shape[k] = t.shape()[static_cast<std::size_t>(perm[k])];
    strides[k] = src_strides[static_cast<std::size_t>(perm[k])];
  }
  DenseTensor<Scalar> out(shape);
  Shape counter(d, 0);
  Index src = 0;
  for (Index flat = 0; flat < out.numel(); ++flat) {
    out[flat] = t[src];
    for (std::size_t k = d; k-- > 0;) {
      if (++counter[k] < shape[k]) {
        src += strides[k];
        break;
      }
      src -= (shape[k] - 1) * strides[k];
      counter[k] = 0;
    }
  }
  return out;
}

/// u^(1) o u^(2) o ... o u^(d).
template <typename Scalar>
DenseTensor<Scalar> outer_rank1(std::span<const Vector<Scalar>> vectors) {
  if (vectors.empty()) throw Error(Errc::EmptyInput, "outer product of zero vectors");
  Shape shape;
  Vector<Scalar> acc = Vector<Scalar>::Ones(1);
  for (const auto& v : vectors) {
    if (v.size() == 0) throw Error(Errc::EmptyInput, "outer product factor is empty");
    shape.push_back(v.size());
    RowMatrix<Scalar> next = acc * v.transpose();
    acc = Eigen::Map<const Vector<Scalar>>(next.data(), next.size());
  }
  return DenseTensor<Scalar>(std::move(shape), std::move(acc));
}

template <typename Scalar>
DenseTensor<Scalar> outer_rank1(const std::vector<Vector<Scalar>>& vectors) {
  return outer_rank1<Scalar>(std::span<const Vector<Scalar>>(vectors));
}

template <typename Scalar>
DenseTensor<Scalar> hadamard(const DenseTensor<Scalar>& a, const Mask& m) {
  if (a.shape() != m.shape())
    throw Error(Errc::ShapeMismatch, "mask shape " + to_string(m.shape()) + " vs tensor " + to_string(a.shape()));
  return DenseTensor<Scalar>(a.shape(), a.data().cwiseProduct(m.as<Scalar>()));
}

template <typename Scalar>
DenseTensor<Scalar> hadamard(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& b) {
  if (a.shape() != b.shape())
    throw Error(Errc::ShapeMismatch, "shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  return DenseTensor<Scalar>(a.shape(), a.data().cwiseProduct(b.data()));
}

template <typename Scalar>
Scalar frobenius_norm(const DenseTensor<Scalar>& a) {
  return a.data().norm();
}

template <typename Scalar>
DenseTensor<Scalar> operator+(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw Error(Errc::ShapeMismatch, "sum of mismatched shapes");
  return DenseTensor<Scalar>(a.shape(), a.data() + b.data());
}

template <typename Scalar>
DenseTensor<Scalar> operator-(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw Error(Errc::ShapeMismatch, "difference of mismatched shapes");
  return DenseTensor<Scalar>(a.shape(), a.data() - b.data());
}

template <typename Scalar>
DenseTensor<Scalar> operator*(Scalar c, const DenseTensor<Scalar>& a) {
  return DenseTensor<Scalar>(a.shape(), c * a.data());
}

template <typename Scalar, typename Rng>
DenseTensor<Scalar> random_normal(Shape shape, Rng& rng, Scalar stddev = Scalar(1)) {
  DenseTensor<Scalar> t(std::move(shape));
  std::normal_distribution<Scalar> dist(Scalar(0), stddev);
  for (Index i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

template <typename Scalar, typename Rng>
Matrix<Scalar> random_normal_matrix(Index rows, Index cols, Rng& rng, Scalar stddev = Scalar(1)) {
  Matrix<Scalar> m(rows, cols);
  std::normal_distribution<Scalar> dist(Scalar(0), stddev);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace tenslim
