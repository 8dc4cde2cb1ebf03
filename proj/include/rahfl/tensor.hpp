#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rahfl {

/// Dense row-major tensor of doubles. Shapes are immutable after construction.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data) {
    if (count(shape) != data.size()) {
      throw std::invalid_argument("Tensor::from: shape/data length mismatch");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor row(std::initializer_list<double> vs) {
    return from({1, vs.size()}, std::vector<double>(vs));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rank() const { return shape_.size(); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : dim_error()); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : dim_error()); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  Tensor row_copy(std::size_t r) const {
    Tensor out({cols()});
    for (std::size_t c = 0; c < cols(); ++c) out[c] = at(r, c);
    return out;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }
  std::size_t dim_error() const { throw std::logic_error("Tensor: rows/cols on non-matrix"); }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

inline void ensure_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw std::runtime_error(std::string("non-finite values in ") + what);
  }
}

inline void ensure_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a) +
                                " vs " + shape_string(b));
  }
}

inline uint64_t fnv1a_bytes(const void* p, std::size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t checksum(const Tensor& t) {
  uint64_t h = fnv1a_bytes(t.shape().data(), t.shape().size() * sizeof(std::size_t));
  return fnv1a_bytes(t.data().data(), t.data().size() * sizeof(double), h);
}

}  // namespace rahfl
