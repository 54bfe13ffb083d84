#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "vlur/core/common.hpp"
#include "vlur/core/rng.hpp"

namespace vlur {

// Dense row-major tensor with value semantics. All layouts in this codebase
// are channels-last: images are [H,W,3], feature maps [N,H,W,C].
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
  TensorT(Shape s, T fill) : shape(std::move(s)), data(numel_of(shape), fill) {}
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape));
  }

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) { return TensorT(std::move(s), v); }
  static TensorT scalar(T v) { return TensorT(Shape{1}, v); }

  static TensorT randn(Shape s, rng::Stream& rs, T stddev = T(1)) {
    TensorT t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rs.normal() * static_cast<double>(stddev));
    return t;
  }

  static TensorT rand_uniform(Shape s, rng::Stream& rs, T lo, T hi) {
    TensorT t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rs.uniform(lo, hi));
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
  T& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  uint64_t content_hash() const {
    uint64_t h = fnv1a64(data.data(), data.size() * sizeof(T));
    for (int64_t d : shape) h = fnv1a64(&d, sizeof(d), h);
    return h;
  }
};

using Tensorf = TensorT<float>;
using Tensord = TensorT<double>;

template <class U, class T>
TensorT<U> tensor_cast(const TensorT<T>& t) {
  TensorT<U> out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<U>(t[i]);
  return out;
}

}  // namespace vlur
