// Dense row-major tensor. Real is float for training, double for
// verification; everything downstream is templated on it.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "baton/common.hpp"
#include "baton/rng.hpp"

namespace baton {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor random(RngStream& rng, Shape shape, bool normal_dist,
                       double sigma = 1.0) {
    if (shape.empty()) throw ShapeError("rng_tensor: empty shape");
    Tensor t(std::move(shape));
    for (auto& v : t.data_)
      v = static_cast<Real>(normal_dist ? rng.normal(sigma) : rng.uniform01());
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }

  // Number of rows/cols when viewed as a matrix (trailing dim = cols).
  std::int64_t rows() const {
    return shape_.empty() ? 0 : numel() / shape_.back();
  }
  std::int64_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& vec() { return data_; }
  const std::vector<Real>& vec() const { return data_; }

  Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  Real& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  Real at2(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (Real v : data_)
      if (!is_finite(v)) return false;
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string(what) + ": non-finite value");
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.set(shape_, std::vector<Other>(data_.begin(), data_.end()));
    return t;
  }

  void set(Shape shape, std::vector<Real> data) {
    shape_ = std::move(shape);
    data_ = std::move(data);
    validate_shape();
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("tensor data size does not match shape");
  }

 private:
  void validate_shape() const {
    for (auto d : shape_)
      if (d <= 0) throw ShapeError("invalid shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<Real> data_;
};

// Elementwise helpers used outside the autodiff tape.

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  Tensor<Real> c = a;
  for (std::int64_t i = 0; i < c.numel(); ++i) c[i] += b[i];
  return c;
}

template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
  Tensor<Real> c = a;
  for (std::int64_t i = 0; i < c.numel(); ++i) c[i] -= b[i];
  return c;
}

template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real s) {
  Tensor<Real> c = a;
  for (std::int64_t i = 0; i < c.numel(); ++i) c[i] *= s;
  return c;
}

// C = A(n,k) * B(k,m), accumulated in Real.
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  const std::int64_t n = a.rows(), k = a.cols(), k2 = b.rows(), m = b.cols();
  if (k != k2)
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor<Real> c(Shape{n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    const Real* arow = a.data() + i * k;
    Real* crow = c.data() + i * m;
    for (std::int64_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b.data() + p * m;
      for (std::int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class Real>
double dot(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.numel() != b.numel()) throw ShapeError("dot: size mismatch");
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class Real>
double norm(const Tensor<Real>& a) {
  return std::sqrt(dot(a, a));
}

template <class Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace baton
