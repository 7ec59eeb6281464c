#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rkdl {
namespace detail {

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
  throw std::runtime_error(where + ": " + what);
}

inline void require(bool ok, const std::string& where, const std::string& what) {
  if (!ok) fail(where, what);
}

// literal-only overload: no message construction unless the check fails
inline void require(bool ok, const char* where, const char* what) {
  if (!ok) fail(where, what);
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

}  // namespace detail

// Dense row-major container of 64-bit floats; the single numeric carrier for
// states, parameters and activations. Shapes are explicit, no broadcasting.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != count(shape_))
      detail::fail("Tensor", "value count " + std::to_string(data_.size()) +
                                 " does not match shape " + detail::shape_str(shape_));
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      detail::require(row.size() == c, "Tensor::from_rows", "ragged rows");
      for (double v : row) t.data_[i++] = v;
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    detail::require(axis < shape_.size(), "Tensor::dim", "axis out of range");
    return shape_[axis];
  }

  std::size_t rows() const { return rank() >= 1 ? shape_[0] : 0; }
  std::size_t cols() const {
    if (rank() != 2)
      detail::fail("Tensor::cols", "rank-2 tensor expected, got " + detail::shape_str(shape_));
    return shape_[1];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  // Reshape in place, reusing the current allocation where it suffices.
  // Existing elements are kept up to the new count; any growth is zero-filled.
  void resize(std::initializer_list<std::size_t> shape) {
    shape_.assign(shape.begin(), shape.end());
    data_.resize(count(shape_));
  }

  void resize(const std::vector<std::size_t>& shape) {
    shape_ = shape;
    data_.resize(count(shape_));
  }

  void resize_like(const Tensor& o) {
    shape_ = o.shape_;
    data_.resize(o.data_.size());
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  double min() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double x : data_) m = std::min(m, x);
    return m;
  }

  double max() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double x : data_) m = std::max(m, x);
    return m;
  }

  double sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
  }

  double mean() const { return data_.empty() ? 0.0 : sum() / double(data_.size()); }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (count(shape) != numel())
      detail::fail("Tensor::reshaped",
                   "cannot reshape " + detail::shape_str(shape_) + " to " + detail::shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double c) {
    for (double& x : data_) x *= c;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(double c, Tensor a) { return a *= c; }
  friend Tensor operator*(Tensor a, double c) { return a *= c; }

  // elementwise product
  friend Tensor operator*(Tensor a, const Tensor& b) {
    a.check_same(b, "*");
    for (std::size_t i = 0; i < a.data_.size(); ++i) a.data_[i] *= b.data_[i];
    return a;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  void check_same(const Tensor& o, const char* op) const {
    if (!same_shape(o))
      detail::fail(std::string("Tensor") + op,
                   "shape mismatch " + detail::shape_str(shape_) + " vs " + detail::shape_str(o.shape_));
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace rkdl
