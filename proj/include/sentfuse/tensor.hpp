// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sentfuse/errors.hpp"

namespace sentfuse {

// Dense row-major tensor. 1-D (vectors, scalars as length-1) and 2-D
// (token matrices) cover everything the model needs.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), S(0)) {
    if (shape_.empty()) throw ShapeError("tensor shape must not be empty");
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str());
    }
  }

  Tensor(std::vector<std::size_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw ShapeError("tensor shape must not be empty");
    if (count(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str());
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, S v) {
    Tensor t(std::move(shape));
    for (S& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = S(1);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return ndim() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return ndim() == 2 ? shape_[1] : shape_[0]; }

  std::vector<S>& data() { return data_; }
  const std::vector<S>& data() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const S& x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    std::vector<T> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(d));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t(1), std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

namespace detail {

template <class S>
inline void require_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite()) {
    throw Error(std::string(op) + ": non-finite values in tensor " + t.shape_str());
  }
}

template <class S>
inline void require_2d(const Tensor<S>& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + t.shape_str());
  }
}

}  // namespace detail

}  // namespace sentfuse
