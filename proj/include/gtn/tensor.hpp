#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gtn/error.hpp"

namespace gtn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("shape " + shape_str(shape) + " has a zero dimension");
    n *= d;
  }
  return n;
}

/**
 * Dense n-dimensional array of 64-bit floats in row-major order.
 *
 * Tensors are plain values: copies are deep and the free functions below
 * never mutate their arguments. Every operation that produces a tensor
 * checks the result for NaN/Inf and throws NumericError instead of letting
 * non-finite values propagate.
 */
class Tensor {
public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("shape " + shape_str(shape_) + " does not match payload of " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Row-major access for the ranks this library uses.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Same payload under a new shape; element count must be unchanged.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                     " tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace detail

/**
 * Matrix product of a [m x k] and b [k x n].
 *
 * Each output entry accumulates its k products in ascending inner-index
 * order, so results are bit-reproducible across runs.
 */
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = pa[i * k + l];
      const double* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
  detail::ensure_finite(c, "matmul");
  return c;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor c = a;
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < c.size(); ++i) pc[i] += pb[i];
  detail::ensure_finite(c, "add");
  return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor c = a;
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < c.size(); ++i) pc[i] -= pb[i];
  detail::ensure_finite(c, "sub");
  return c;
}

/// Hadamard (elementwise) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor c = a;
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < c.size(); ++i) pc[i] *= pb[i];
  detail::ensure_finite(c, "mul");
  return c;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (double& v : c.values()) v *= s;
  detail::ensure_finite(c, "scale");
  return c;
}

/// sigmoid(z) = 1 / (1 + exp(-z)), applied elementwise.
inline Tensor sigmoid(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.values()) v = 1.0 / (1.0 + std::exp(-v));
  detail::ensure_finite(c, "sigmoid");
  return c;
}

/// relu(z) = max(0, z), applied elementwise.
inline Tensor relu(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.values()) v = v > 0.0 ? v : 0.0;
  detail::ensure_finite(c, "relu");
  return c;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor c({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c.at(j, i) = a.at(i, j);
  return c;
}

/// Sum of all entries, accumulated left to right in flat order.
inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  if (!std::isfinite(s)) throw NumericError("sum produced a non-finite value");
  return s;
}

inline double mean(const Tensor& a) {
  if (a.empty()) throw ValueError("mean of an empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

/// Column sums of a [m x n] matrix -> [n].
inline Tensor col_sum(const Tensor& a) {
  detail::require_rank(a, 2, "col_sum");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor c({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[j] += a.at(i, j);
  detail::ensure_finite(c, "col_sum");
  return c;
}

/// Row sums of a [m x n] matrix -> [m].
inline Tensor row_sum(const Tensor& a) {
  detail::require_rank(a, 2, "row_sum");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor c({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
    c[i] = s;
  }
  detail::ensure_finite(c, "row_sum");
  return c;
}

/// Index of the maximum entry in each row of a [m x n] matrix.
inline std::vector<std::size_t> argmax_rows(const Tensor& a) {
  detail::require_rank(a, 2, "argmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> out(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    double best = a.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) {
      if (a.at(i, j) > best) {
        best = a.at(i, j);
        out[i] = j;
      }
    }
  }
  return out;
}

/// Select rows (slices along the first axis) by index, in the given order.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() < 1) throw ShapeError("gather_rows: tensor has no rows");
  const std::size_t stride = a.size() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= a.dim(0)) {
      throw ValueError("gather_rows: index " + std::to_string(indices[r]) + " out of range");
    }
    std::copy_n(a.data() + indices[r] * stride, stride, out.data() + r * stride);
  }
  return out;
}

}  // namespace gtn
