// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace c3 {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + ")";
}

/// Dense row-major tensor. The last axis is contiguous.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), T(0)) {}
  Tensor(Shape s, T fill) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), fill) {}
  Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T x) { return Tensor(std::move(s), x); }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool empty() const { return v.empty(); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  // 4D accessors (NCHW and friends)
  T& at(int a, int b, int c, int d) {
    return v[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  const T& at(int a, int b, int c, int d) const {
    return v[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  T& at(int a, int b, int c) {
    return v[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  const T& at(int a, int b, int c) const {
    return v[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  T& at(int a, int b) { return v[static_cast<size_t>(a) * shape[1] + b]; }
  const T& at(int a, int b) const { return v[static_cast<size_t>(a) * shape[1] + b]; }

  Tensor<T> reshaped(Shape s) const {
    if (numel_of(s) != numel()) throw std::invalid_argument("reshape numel mismatch");
    Tensor<T> r;
    r.shape = std::move(s);
    r.v = v;
    return r;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> r;
    r.shape = shape;
    r.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) r.v[i] = static_cast<U>(v[i]);
    return r;
  }
};

template <class T>
inline bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

template <class T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!same_shape(a, b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

}  // namespace c3
