#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "stpred/errors.hpp"

namespace stpred {

// Dense row-major array of small rank (vectors, matrices, NCHW stacks).
// Hot loops index through data(); operator() is for setup, tests and glue.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{})
      : shape_(std::move(shape)), v_(numel_of(shape_), fill) {}

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }

  T& operator[](std::size_t i) { return v_[i]; }
  const T& operator[](std::size_t i) const { return v_[i]; }

  T& operator()(std::size_t i) { return v_[i]; }
  const T& operator()(std::size_t i) const { return v_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return v_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return v_[i * shape_[1] + j];
  }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return v_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return v_[(i * shape_[1] + j) * shape_[2] + k];
  }

  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return v_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k,
                      std::size_t l) const {
    return v_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(T v) { std::fill(v_.begin(), v_.end(), v); }
  void zero() { fill(T{}); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& x : v_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && v_ == o.v_;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < v_.size(); ++i)
      out[i] = static_cast<U>(v_[i]);
    return out;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    if (s.empty()) return 0;
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> v_;
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* where) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(where) + ": operand shapes differ");
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace stpred
