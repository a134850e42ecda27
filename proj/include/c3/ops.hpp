// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "c3/autodiff.hpp"

namespace c3 {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

// ---------------------------------------------------------------------------
// elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor<T> y = a.val();
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.val().v[i];
  return Var<T>::make(std::move(y), {a, b}, [a, b](typename Var<T>::Node& self) mutable {
    if (a.requires_grad()) a.node()->accum(self.grad);
    if (b.requires_grad()) b.node()->accum(self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor<T> y = a.val();
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] -= b.val().v[i];
  return Var<T>::make(std::move(y), {a, b}, [a, b](typename Var<T>::Node& self) mutable {
    if (a.requires_grad()) a.node()->accum(self.grad);
    if (b.requires_grad()) {
      Tensor<T> g = self.grad;
      for (auto& x : g.v) x = -x;
      b.node()->accum(g);
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor<T> y = a.val();
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] *= b.val().v[i];
  return Var<T>::make(std::move(y), {a, b}, [a, b](typename Var<T>::Node& self) mutable {
    if (a.requires_grad()) {
      Tensor<T> g = self.grad;
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= b.val().v[i];
      a.node()->accum(g);
    }
    if (b.requires_grad()) {
      Tensor<T> g = self.grad;
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= a.val().v[i];
      b.node()->accum(g);
    }
  });
}

/// y = k*a + c elementwise.
template <class T>
Var<T> affine(const Var<T>& a, T k, T c) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = k * x + c;
  return Var<T>::make(std::move(y), {a}, [a, k](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (auto& x : g.v) x *= k;
    a.node()->accum(g);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T k) {
  return affine(a, k, T(0));
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = x > T(0) ? x : T(0);
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i)
      if (a.val().v[i] <= T(0)) g.v[i] = T(0);
    a.node()->accum(g);
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = T(1) / (T(1) + std::exp(-x));
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      const T s = self.val.v[i];
      g.v[i] *= s * (T(1) - s);
    }
    a.node()->accum(g);
  });
}

template <class T>
Var<T> tanh_op(const Var<T>& a) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = std::tanh(x);
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      const T t = self.val.v[i];
      g.v[i] *= T(1) - t * t;
    }
    a.node()->accum(g);
  });
}

/// Natural log; caller clamps the domain first.
template <class T>
Var<T> log_op(const Var<T>& a) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = std::log(x);
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] /= a.val().v[i];
    a.node()->accum(g);
  });
}

template <class T>
Var<T> abs_op(const Var<T>& a) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = std::abs(x);
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      const T x = a.val().v[i];
      g.v[i] *= x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
    }
    a.node()->accum(g);
  });
}

template <class T>
Var<T> square(const Var<T>& a) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = x * x;
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= T(2) * a.val().v[i];
    a.node()->accum(g);
  });
}

/// Gradient passes inside [lo, hi] inclusive.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> y = a.val();
  for (auto& x : y.v) x = std::min(hi, std::max(lo, x));
  return Var<T>::make(std::move(y), {a}, [a, lo, hi](typename Var<T>::Node& self) mutable {
    Tensor<T> g = self.grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      const T x = a.val().v[i];
      if (x < lo || x > hi) g.v[i] = T(0);
    }
    a.node()->accum(g);
  });
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Var<T> sum_all(const Var<T>& a) {
  double acc = 0;
  for (const T x : a.val().v) acc += static_cast<double>(x);
  Tensor<T> y({1}, static_cast<T>(acc));
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    a.node()->accum(Tensor<T>::full(a.val().shape, self.grad.v[0]));
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  const T inv = static_cast<T>(1.0 / static_cast<double>(a.val().numel()));
  return scale(sum_all(a), inv);
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> y = a.val().reshaped(std::move(s));
  return Var<T>::make(std::move(y), {a}, [a](typename Var<T>::Node& self) mutable {
    a.node()->accum(self.grad.reshaped(a.val().shape));
  });
}

/// Block slice along axis 0: rows [r0, r1).
template <class T>
Var<T> slice_rows(const Var<T>& a, int r0, int r1) {
  const auto& s = a.val().shape;
  const int64_t rowsz = a.val().numel() / s[0];
  Shape os = s;
  os[0] = r1 - r0;
  Tensor<T> y(os);
  std::copy_n(a.val().data() + r0 * rowsz, (r1 - r0) * rowsz, y.data());
  return Var<T>::make(std::move(y), {a}, [a, r0, rowsz](typename Var<T>::Node& self) mutable {
    auto* node = a.node().get();
    if (node->grad.empty()) node->grad = Tensor<T>::zeros(a.val().shape);
    T* dst = node->grad.data() + r0 * rowsz;
    for (size_t i = 0; i < self.grad.v.size(); ++i) dst[i] += self.grad.v[i];
  });
}

/// Slice [c0, c1) of the last axis.
template <class T>
Var<T> slice_lastdim(const Var<T>& a, int c0, int c1) {
  const auto& s = a.val().shape;
  const int d = s.back();
  const int64_t rows = a.val().numel() / d;
  Shape os = s;
  os.back() = c1 - c0;
  Tensor<T> y(os);
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(a.val().data() + r * d + c0, c1 - c0, y.data() + r * (c1 - c0));
  return Var<T>::make(std::move(y), {a}, [a, c0, c1, d, rows](typename Var<T>::Node& self) mutable {
    auto* node = a.node().get();
    if (node->grad.empty()) node->grad = Tensor<T>::zeros(a.val().shape);
    const int w = c1 - c0;
    for (int64_t r = 0; r < rows; ++r) {
      T* dst = node->grad.data() + r * d + c0;
      const T* src = self.grad.data() + r * w;
      for (int i = 0; i < w; ++i) dst[i] += src[i];
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  Shape s = parts[0].val().shape;
  const int64_t rowsz = parts[0].val().numel() / s[0];
  int total = 0;
  for (const auto& p : parts) total += p.val().shape[0];
  s[0] = total;
  Tensor<T> y(s);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.val().data(), p.val().numel(), y.data() + off);
    off += p.val().numel();
  }
  return Var<T>::make(std::move(y), parts, [parts, rowsz](typename Var<T>::Node& self) mutable {
    int64_t off = 0;
    for (auto& p : parts) {
      const int64_t n = p.val().numel();
      if (p.requires_grad()) {
        Tensor<T> g(p.val().shape);
        std::copy_n(self.grad.data() + off, n, g.data());
        p.node()->accum(g);
      }
      off += n;
    }
  });
}

template <class T>
Var<T> concat_lastdim(const std::vector<Var<T>>& parts) {
  Shape s = parts[0].val().shape;
  const int64_t rows = parts[0].val().numel() / s.back();
  int total = 0;
  for (const auto& p : parts) total += p.val().shape.back();
  Shape os = s;
  os.back() = total;
  Tensor<T> y(os);
  int off = 0;
  for (const auto& p : parts) {
    const int d = p.val().shape.back();
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(p.val().data() + r * d, d, y.data() + r * total + off);
    off += d;
  }
  return Var<T>::make(std::move(y), parts, [parts, rows, total](typename Var<T>::Node& self) mutable {
    int off = 0;
    for (auto& p : parts) {
      const int d = p.val().shape.back();
      if (p.requires_grad()) {
        Tensor<T> g(p.val().shape);
        for (int64_t r = 0; r < rows; ++r)
          std::copy_n(self.grad.data() + r * total + off, d, g.data() + r * d);
        p.node()->accum(g);
      }
      off += d;
    }
  });
}

/// Concat along axis 1 of NCHW tensors.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  const auto& s0 = parts[0].val().shape;
  const int n = s0[0], h = s0[2], w = s0[3];
  int ctot = 0;
  for (const auto& p : parts) ctot += p.val().shape[1];
  Tensor<T> y({n, ctot, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  int coff = 0;
  for (const auto& p : parts) {
    const int c = p.val().shape[1];
    for (int b = 0; b < n; ++b)
      std::copy_n(p.val().data() + b * c * plane, c * plane,
                  y.data() + (static_cast<int64_t>(b) * ctot + coff) * plane);
    coff += c;
  }
  return Var<T>::make(std::move(y), parts,
                      [parts, n, ctot, plane](typename Var<T>::Node& self) mutable {
                        int coff = 0;
                        for (auto& p : parts) {
                          const int c = p.val().shape[1];
                          if (p.requires_grad()) {
                            Tensor<T> g(p.val().shape);
                            for (int b = 0; b < n; ++b)
                              std::copy_n(
                                  self.grad.data() + (static_cast<int64_t>(b) * ctot + coff) * plane,
                                  c * plane, g.data() + b * c * plane);
                            p.node()->accum(g);
                          }
                          coff += c;
                        }
                      });
}

template <class T>
Var<T> slice_channels(const Var<T>& a, int c0, int c1) {
  const auto& s = a.val().shape;
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor<T> y({n, c1 - c0, h, w});
  for (int b = 0; b < n; ++b)
    std::copy_n(a.val().data() + (static_cast<int64_t>(b) * c + c0) * plane, (c1 - c0) * plane,
                y.data() + static_cast<int64_t>(b) * (c1 - c0) * plane);
  return Var<T>::make(std::move(y), {a}, [a, c0, c1, n, c, plane](typename Var<T>::Node& self) mutable {
    auto* node = a.node().get();
    if (node->grad.empty()) node->grad = Tensor<T>::zeros(a.val().shape);
    for (int b = 0; b < n; ++b) {
      T* dst = node->grad.data() + (static_cast<int64_t>(b) * c + c0) * plane;
      const T* src = self.grad.data() + static_cast<int64_t>(b) * (c1 - c0) * plane;
      for (int64_t i = 0; i < (c1 - c0) * plane; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// broadcast helpers

template <class T>
Var<T> add_bias_lastdim(const Var<T>& x, const Var<T>& b) {
  const int d = x.val().shape.back();
  const int64_t rows = x.val().numel() / d;
  Tensor<T> y = x.val();
  for (int64_t r = 0; r < rows; ++r)
    for (int i = 0; i < d; ++i) y.v[r * d + i] += b.val().v[i];
  return Var<T>::make(std::move(y), {x, b}, [x, b, rows, d](typename Var<T>::Node& self) mutable {
    if (x.requires_grad()) x.node()->accum(self.grad);
    if (b.requires_grad()) {
      Tensor<T> g(b.val().shape);
      for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i) g.v[i] += self.grad.v[r * d + i];
      b.node()->accum(g);
    }
  });
}

template <class T>
Var<T> add_bias_channel(const Var<T>& x, const Var<T>& b) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor<T> y = x.val();
  for (int bi = 0; bi < n; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      T* p = y.data() + (static_cast<int64_t>(bi) * c + ci) * plane;
      const T add = b.val().v[ci];
      for (int64_t i = 0; i < plane; ++i) p[i] += add;
    }
  return Var<T>::make(std::move(y), {x, b}, [x, b, n, c, plane](typename Var<T>::Node& self) mutable {
    if (x.requires_grad()) x.node()->accum(self.grad);
    if (b.requires_grad()) {
      Tensor<T> g(b.val().shape);
      for (int bi = 0; bi < n; ++bi)
        for (int ci = 0; ci < c; ++ci) {
          const T* p = self.grad.data() + (static_cast<int64_t>(bi) * c + ci) * plane;
          double acc = 0;
          for (int64_t i = 0; i < plane; ++i) acc += p[i];
          g.v[ci] += static_cast<T>(acc);
        }
      b.node()->accum(g);
    }
  });
}

/// x: [N,C,H,W], m: [N,1,H,W]; y = x * m broadcast over channels.
template <class T>
Var<T> mul_broadcast_channel(const Var<T>& x, const Var<T>& m) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  Tensor<T> y = x.val();
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      T* p = y.data() + (static_cast<int64_t>(b) * c + ci) * plane;
      const T* mm = m.val().data() + static_cast<int64_t>(b) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] *= mm[i];
    }
  return Var<T>::make(std::move(y), {x, m}, [x, m, n, c, plane](typename Var<T>::Node& self) mutable {
    if (x.requires_grad()) {
      Tensor<T> g = self.grad;
      for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
          T* p = g.data() + (static_cast<int64_t>(b) * c + ci) * plane;
          const T* mm = m.val().data() + static_cast<int64_t>(b) * plane;
          for (int64_t i = 0; i < plane; ++i) p[i] *= mm[i];
        }
      x.node()->accum(g);
    }
    if (m.requires_grad()) {
      Tensor<T> g(m.val().shape);
      for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < c; ++ci) {
          const T* gy = self.grad.data() + (static_cast<int64_t>(b) * c + ci) * plane;
          const T* xv = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
          T* gm = g.data() + static_cast<int64_t>(b) * plane;
          for (int64_t i = 0; i < plane; ++i) gm[i] += gy[i] * xv[i];
        }
      m.node()->accum(g);
    }
  });
}

/// x: [B,S,D], p: [S,D]; y[b,s,:] = x[b,s,:] + p[s,:].
template <class T>
Var<T> add_broadcast_batch(const Var<T>& x, const Var<T>& p) {
  const auto& s = x.val().shape;
  const int bsz = s[0];
  const int64_t chunk = x.val().numel() / bsz;
  Tensor<T> y = x.val();
  for (int b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < chunk; ++i) y.v[b * chunk + i] += p.val().v[i];
  return Var<T>::make(std::move(y), {x, p}, [x, p, bsz, chunk](typename Var<T>::Node& self) mutable {
    if (x.requires_grad()) x.node()->accum(self.grad);
    if (p.requires_grad()) {
      Tensor<T> g(p.val().shape);
      for (int b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < chunk; ++i) g.v[i] += self.grad.v[b * chunk + i];
      p.node()->accum(g);
    }
  });
}

/// x: [B,S,D], q: [B,D]; y[b,s,:] = x[b,s,:] + q[b,:].
template <class T>
Var<T> add_broadcast_seq(const Var<T>& x, const Var<T>& q) {
  const auto& s = x.val().shape;
  const int bsz = s[0], seq = s[1], d = s[2];
  Tensor<T> y = x.val();
  for (int b = 0; b < bsz; ++b)
    for (int t = 0; t < seq; ++t)
      for (int i = 0; i < d; ++i) y.at(b, t, i) += q.val().at(b, i);
  return Var<T>::make(std::move(y), {x, q}, [x, q, bsz, seq, d](typename Var<T>::Node& self) mutable {
    if (x.requires_grad()) x.node()->accum(self.grad);
    if (q.requires_grad()) {
      Tensor<T> g(q.val().shape);
      for (int b = 0; b < bsz; ++b)
        for (int t = 0; t < seq; ++t)
          for (int i = 0; i < d; ++i) g.at(b, i) += self.grad.at(b, t, i);
      q.node()->accum(g);
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const int m = a.val().shape[0], k = a.val().shape[1], n = b.val().shape[1];
  if (b.val().shape[0] != k) throw std::invalid_argument("matmul inner dim mismatch");
  Tensor<T> y({m, n});
  EMap<T>(y.data(), m, n).noalias() =
      ECMap<T>(a.val().data(), m, k) * ECMap<T>(b.val().data(), k, n);
  return Var<T>::make(std::move(y), {a, b}, [a, b, m, k, n](typename Var<T>::Node& self) mutable {
    ECMap<T> g(self.grad.data(), m, n);
    if (a.requires_grad()) {
      Tensor<T> ga({m, k});
      EMap<T>(ga.data(), m, k).noalias() = g * ECMap<T>(b.val().data(), k, n).transpose();
      a.node()->accum(ga);
    }
    if (b.requires_grad()) {
      Tensor<T> gb({k, n});
      EMap<T>(gb.data(), k, n).noalias() = ECMap<T>(a.val().data(), m, k).transpose() * g;
      b.node()->accum(gb);
    }
  });
}

/// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  const int bs = a.val().shape[0], m = a.val().shape[1], k = a.val().shape[2];
  const int n = b.val().shape[2];
  if (b.val().shape[0] != bs || b.val().shape[1] != k)
    throw std::invalid_argument("bmm shape mismatch");
  Tensor<T> y({bs, m, n});
  for (int i = 0; i < bs; ++i)
    EMap<T>(y.data() + static_cast<int64_t>(i) * m * n, m, n).noalias() =
        ECMap<T>(a.val().data() + static_cast<int64_t>(i) * m * k, m, k) *
        ECMap<T>(b.val().data() + static_cast<int64_t>(i) * k * n, k, n);
  return Var<T>::make(std::move(y), {a, b}, [a, b, bs, m, k, n](typename Var<T>::Node& self) mutable {
    for (int i = 0; i < bs; ++i) {
      ECMap<T> g(self.grad.data() + static_cast<int64_t>(i) * m * n, m, n);
      if (a.requires_grad()) {
        Tensor<T> ga({m, k});
        EMap<T>(ga.data(), m, k).noalias() =
            g * ECMap<T>(b.val().data() + static_cast<int64_t>(i) * k * n, k, n).transpose();
        auto* node = a.node().get();
        if (node->grad.empty()) node->grad = Tensor<T>::zeros(a.val().shape);
        T* dst = node->grad.data() + static_cast<int64_t>(i) * m * k;
        for (int64_t j = 0; j < static_cast<int64_t>(m) * k; ++j) dst[j] += ga.v[j];
      }
      if (b.requires_grad()) {
        Tensor<T> gb({k, n});
        EMap<T>(gb.data(), k, n).noalias() =
            ECMap<T>(a.val().data() + static_cast<int64_t>(i) * m * k, m, k).transpose() * g;
        auto* node = b.node().get();
        if (node->grad.empty()) node->grad = Tensor<T>::zeros(b.val().shape);
        T* dst = node->grad.data() + static_cast<int64_t>(i) * k * n;
        for (int64_t j = 0; j < static_cast<int64_t>(k) * n; ++j) dst[j] += gb.v[j];
      }
    }
  });
}

/// [B,M,N] -> [B,N,M].
template <class T>
Var<T> transpose_bmm(const Var<T>& a) {
  const int bs = a.val().shape[0], m = a.val().shape[1], n = a.val().shape[2];
  Tensor<T> y({bs, n, m});
  for (int b = 0; b < bs; ++b)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) y.at(b, j, i) = a.val().at(b, i, j);
  return Var<T>::make(std::move(y), {a}, [a, bs, m, n](typename Var<T>::Node& self) mutable {
    Tensor<T> g(a.val().shape);
    for (int b = 0; b < bs; ++b)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g.at(b, i, j) = self.grad.at(b, j, i);
    a.node()->accum(g);
  });
}

// ---------------------------------------------------------------------------
// softmax family (over the last axis; any leading shape)

template <class T>
Var<T> softmax_lastdim(const Var<T>& a) {
  const int d = a.val().shape.back();
  const int64_t rows = a.val().numel() / d;
  Tensor<T> y = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    T* p = y.data() + r * d;
    T mx = p[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, p[i]);
    double s = 0;
    for (int i = 0; i < d; ++i) {
      p[i] = std::exp(p[i] - mx);
      s += p[i];
    }
    const T inv = static_cast<T>(1.0 / s);
    for (int i = 0; i < d; ++i) p[i] *= inv;
  }
  return Var<T>::make(std::move(y), {a}, [a, rows, d](typename Var<T>::Node& self) mutable {
    Tensor<T> g(a.val().shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* yv = self.val.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      double dot = 0;
      for (int i = 0; i < d; ++i) dot += static_cast<double>(gy[i]) * yv[i];
      T* gp = g.data() + r * d;
      for (int i = 0; i < d; ++i) gp[i] = yv[i] * (gy[i] - static_cast<T>(dot));
    }
    a.node()->accum(g);
  });
}

template <class T>
Var<T> log_softmax_lastdim(const Var<T>& a) {
  const int d = a.val().shape.back();
  const int64_t rows = a.val().numel() / d;
  Tensor<T> y = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    T* p = y.data() + r * d;
    T mx = p[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, p[i]);
    double s = 0;
    for (int i = 0; i < d; ++i) s += std::exp(static_cast<double>(p[i] - mx));
    const T lse = mx + static_cast<T>(std::log(s));
    for (int i = 0; i < d; ++i) p[i] -= lse;
  }
  return Var<T>::make(std::move(y), {a}, [a, rows, d](typename Var<T>::Node& self) mutable {
    Tensor<T> g(a.val().shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* yv = self.val.data() + r * d;
      const T* gy = self.grad.data() + r * d;
      double gsum = 0;
      for (int i = 0; i < d; ++i) gsum += gy[i];
      T* gp = g.data() + r * d;
      for (int i = 0; i < d; ++i)
        gp[i] = gy[i] - static_cast<T>(std::exp(static_cast<double>(yv[i])) * gsum);
    }
    a.node()->accum(g);
  });
}

/// [S,B,D] <-> [B,S,D].
template <class T>
Var<T> swap01_3d(const Var<T>& a) {
  const int s0 = a.val().shape[0], s1 = a.val().shape[1], d = a.val().shape[2];
  Tensor<T> y({s1, s0, d});
  for (int i = 0; i < s0; ++i)
    for (int j = 0; j < s1; ++j)
      std::copy_n(a.val().data() + (static_cast<int64_t>(i) * s1 + j) * d, d,
                  y.data() + (static_cast<int64_t>(j) * s0 + i) * d);
  return Var<T>::make(std::move(y), {a}, [a, s0, s1, d](typename Var<T>::Node& self) mutable {
    Tensor<T> g(a.val().shape);
    for (int i = 0; i < s0; ++i)
      for (int j = 0; j < s1; ++j)
        std::copy_n(self.grad.data() + (static_cast<int64_t>(j) * s0 + i) * d, d,
                    g.data() + (static_cast<int64_t>(i) * s1 + j) * d);
    a.node()->accum(g);
  });
}

/// Softmax across axis 1 of a [B, K, M] tensor (per (b, m) fiber).
template <class T>
Var<T> softmax_axis1_3d(const Var<T>& a) {
  const int bs = a.val().shape[0], k = a.val().shape[1];
  const int64_t m = a.val().shape[2];
  Tensor<T> y = a.val();
  for (int b = 0; b < bs; ++b) {
    T* base = y.data() + static_cast<int64_t>(b) * k * m;
    for (int64_t c = 0; c < m; ++c) {
      T mx = base[c];
      for (int i = 1; i < k; ++i) mx = std::max(mx, base[i * m + c]);
      double s = 0;
      for (int i = 0; i < k; ++i) {
        base[i * m + c] = std::exp(base[i * m + c] - mx);
        s += base[i * m + c];
      }
      const T inv = static_cast<T>(1.0 / s);
      for (int i = 0; i < k; ++i) base[i * m + c] *= inv;
    }
  }
  return Var<T>::make(std::move(y), {a}, [a, bs, k, m](typename Var<T>::Node& self) mutable {
    Tensor<T> g(a.val().shape);
    for (int b = 0; b < bs; ++b) {
      const T* yb = self.val.data() + static_cast<int64_t>(b) * k * m;
      const T* gy = self.grad.data() + static_cast<int64_t>(b) * k * m;
      T* gb = g.data() + static_cast<int64_t>(b) * k * m;
      for (int64_t c = 0; c < m; ++c) {
        double dot = 0;
        for (int i = 0; i < k; ++i) dot += static_cast<double>(gy[i * m + c]) * yb[i * m + c];
        for (int i = 0; i < k; ++i)
          gb[i * m + c] = yb[i * m + c] * (gy[i * m + c] - static_cast<T>(dot));
      }
    }
    a.node()->accum(g);
  });
}

/// [B,L,A] probability sequence viewed as a 1-pixel-tall image [B,A,1,L].
template <class T>
Var<T> probseq_to_image(const Var<T>& p) {
  const int bs = p.val().shape[0], l = p.val().shape[1], na = p.val().shape[2];
  Tensor<T> y({bs, na, 1, l});
  for (int b = 0; b < bs; ++b)
    for (int t = 0; t < l; ++t)
      for (int a = 0; a < na; ++a) y.at(b, a, 0, t) = p.val().at(b, t, a);
  return Var<T>::make(std::move(y), {p}, [p, bs, l, na](typename Var<T>::Node& self) mutable {
    Tensor<T> g(p.val().shape);
    for (int b = 0; b < bs; ++b)
      for (int t = 0; t < l; ++t)
        for (int a = 0; a < na; ++a) g.at(b, t, a) = self.grad.at(b, a, 0, t);
    p.node()->accum(g);
  });
}

/// Softmax across axis 0 of a [K, M] tensor (per column).
template <class T>
Var<T> softmax_dim0(const Var<T>& a) {
  const int k = a.val().shape[0];
  const int64_t m = a.val().numel() / k;
  Tensor<T> y = a.val();
  for (int64_t c = 0; c < m; ++c) {
    T mx = y.v[c];
    for (int i = 1; i < k; ++i) mx = std::max(mx, y.v[i * m + c]);
    double s = 0;
    for (int i = 0; i < k; ++i) {
      y.v[i * m + c] = std::exp(y.v[i * m + c] - mx);
      s += y.v[i * m + c];
    }
    const T inv = static_cast<T>(1.0 / s);
    for (int i = 0; i < k; ++i) y.v[i * m + c] *= inv;
  }
  return Var<T>::make(std::move(y), {a}, [a, k, m](typename Var<T>::Node& self) mutable {
    Tensor<T> g(a.val().shape);
    for (int64_t c = 0; c < m; ++c) {
      double dot = 0;
      for (int i = 0; i < k; ++i)
        dot += static_cast<double>(self.grad.v[i * m + c]) * self.val.v[i * m + c];
      for (int i = 0; i < k; ++i)
        g.v[i * m + c] = self.val.v[i * m + c] * (self.grad.v[i * m + c] - static_cast<T>(dot));
    }
    a.node()->accum(g);
  });
}

// ---------------------------------------------------------------------------
// layernorm over the last axis

template <class T>
Var<T> layernorm_lastdim(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const int d = x.val().shape.back();
  const int64_t rows = x.val().numel() / d;
  Tensor<T> y(x.val().shape);
  Tensor<T> xhat(x.val().shape);  // kept alive in the closure for backward
  std::vector<T> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* p = x.val().data() + r * d;
    double mu = 0;
    for (int i = 0; i < d; ++i) mu += p[i];
    mu /= d;
    double var = 0;
    for (int i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= d;
    const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[static_cast<size_t>(r)] = istd;
    for (int i = 0; i < d; ++i) {
      const T xh = (p[i] - static_cast<T>(mu)) * istd;
      xhat.v[r * d + i] = xh;
      y.v[r * d + i] = xh * gamma.val().v[i] + beta.val().v[i];
    }
  }
  return Var<T>::make(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       d](typename Var<T>::Node& self) mutable {
        Tensor<T> gx(x.val().shape), gg(gamma.val().shape), gb(beta.val().shape);
        for (int64_t r = 0; r < rows; ++r) {
          const T* gy = self.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          double sum_g = 0, sum_gx = 0;
          for (int i = 0; i < d; ++i) {
            const T gk = gy[i] * gamma.val().v[i];
            sum_g += gk;
            sum_gx += static_cast<double>(gk) * xh[i];
            gg.v[i] += gy[i] * xh[i];
            gb.v[i] += gy[i];
          }
          const T istd = inv_std[static_cast<size_t>(r)];
          for (int i = 0; i < d; ++i) {
            const T gk = gy[i] * gamma.val().v[i];
            gx.v[r * d + i] =
                istd * (gk - static_cast<T>(sum_g) / d - xh[i] * static_cast<T>(sum_gx) / d);
          }
        }
        if (x.requires_grad()) x.node()->accum(gx);
        if (gamma.requires_grad()) gamma.node()->accum(gg);
        if (beta.requires_grad()) beta.node()->accum(gb);
      });
}

// ---------------------------------------------------------------------------
// classification losses

/// Mean negative log-likelihood of target ids over rows of log-probabilities.
template <class T>
Var<T> nll_rows(const Var<T>& logp, const std::vector<int>& targets) {
  const int d = logp.val().shape.back();
  const int64_t rows = logp.val().numel() / d;
  double acc = 0;
  for (int64_t r = 0; r < rows; ++r) acc -= logp.val().v[r * d + targets[static_cast<size_t>(r)]];
  Tensor<T> y({1}, static_cast<T>(acc / static_cast<double>(rows)));
  return Var<T>::make(std::move(y), {logp}, [logp, targets, rows, d](typename Var<T>::Node& self) mutable {
    Tensor<T> g(logp.val().shape);
    const T s = self.grad.v[0] / static_cast<T>(rows);
    for (int64_t r = 0; r < rows; ++r) g.v[r * d + targets[static_cast<size_t>(r)]] = -s;
    logp.node()->accum(g);
  });
}

// ---------------------------------------------------------------------------
// composite numeric helpers

/// Mean absolute difference (elementwise L1, averaged).
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  return mean_all(abs_op(sub(a, b)));
}

/// Mean squared error.
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean_all(square(sub(a, b)));
}

/// KL(p || q) with probabilities clamped to [eps, 1], averaged over rows.
template <class T>
Var<T> kl_rows(const Var<T>& p, const Var<T>& q, T eps = T(1e-8)) {
  check_same_shape(p.val(), q.val(), "kl_rows");
  const int d = p.val().shape.back();
  const int64_t rows = p.val().numel() / d;
  Var<T> pc = clamp(p, eps, T(1));
  Var<T> qc = clamp(q, eps, T(1));
  Var<T> t = mul(pc, sub(log_op(pc), log_op(qc)));
  return scale(sum_all(t), static_cast<T>(1.0 / static_cast<double>(rows)));
}

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

}  // namespace c3
