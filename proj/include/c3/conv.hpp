// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3/ops.hpp"

namespace c3 {

struct Conv2dSpec {
  int sh = 1, sw = 1;  // stride
  int ph = 0, pw = 0;  // zero padding
  int dh = 1, dw = 1;  // dilation
};

inline int conv_out_dim(int in, int k, int s, int p, int d) {
  return (in + 2 * p - d * (k - 1) - 1) / s + 1;
}

namespace detail {

template <class T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, const Conv2dSpec& cs, int ho, int wo,
            T* cols) {
  // cols: [cin*kh*kw, ho*wo]
  const int64_t ncol = static_cast<int64_t>(ho) * wo;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = cols + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * ncol;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * cs.sh - cs.ph + ky * cs.dh;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst + static_cast<int64_t>(oy) * wo, wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * cs.sw - cs.pw + kx * cs.dw;
            dst[static_cast<int64_t>(oy) * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, int cin, int h, int w, int kh, int kw, const Conv2dSpec& cs, int ho,
                int wo, T* x) {
  const int64_t ncol = static_cast<int64_t>(ho) * wo;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = cols + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * ncol;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * cs.sh - cs.ph + ky * cs.dh;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * cs.sw - cs.pw + kx * cs.dw;
            if (ix >= 0 && ix < w) dst[ix] += src[static_cast<int64_t>(oy) * wo + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution, NCHW. w: [cout, cin, kh, kw]; bias optional (undefined Var).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const Conv2dSpec& cs) {
  const auto& xs = x.val().shape;
  const auto& ws = w.val().shape;
  const int n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const int cout = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != cin) throw std::invalid_argument("conv2d: channel mismatch");
  const int ho = conv_out_dim(h, kh, cs.sh, cs.ph, cs.dh);
  const int wo = conv_out_dim(wd, kw, cs.sw, cs.pw, cs.dw);
  const int kdim = cin * kh * kw;
  const int64_t ncol = static_cast<int64_t>(ho) * wo;

  Tensor<T> y({n, cout, ho, wo});
  std::vector<T> cols(static_cast<size_t>(kdim) * ncol);
  for (int b = 0; b < n; ++b) {
    detail::im2col(x.val().data() + static_cast<int64_t>(b) * cin * h * wd, cin, h, wd, kh, kw, cs,
                   ho, wo, cols.data());
    EMap<T>(y.data() + static_cast<int64_t>(b) * cout * ncol, cout, ncol).noalias() =
        ECMap<T>(w.val().data(), cout, kdim) * ECMap<T>(cols.data(), kdim, ncol);
  }
  if (bias.defined())
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < cout; ++c) {
        T* p = y.data() + (static_cast<int64_t>(b) * cout + c) * ncol;
        const T bv = bias.val().v[c];
        for (int64_t i = 0; i < ncol; ++i) p[i] += bv;
      }

  std::vector<Var<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return Var<T>::make(
      std::move(y), parents,
      [x, w, bias, cs, n, cin, h, wd, cout, kh, kw, ho, wo, kdim,
       ncol](typename Var<T>::Node& self) mutable {
        std::vector<T> cols(static_cast<size_t>(kdim) * ncol);
        Tensor<T> gw, gx;
        if (w.requires_grad()) gw = Tensor<T>::zeros(w.val().shape);
        if (x.requires_grad()) gx = Tensor<T>::zeros(x.val().shape);
        std::vector<T> gcols(static_cast<size_t>(kdim) * ncol);
        for (int b = 0; b < n; ++b) {
          ECMap<T> gy(self.grad.data() + static_cast<int64_t>(b) * cout * ncol, cout, ncol);
          if (w.requires_grad()) {
            detail::im2col(x.val().data() + static_cast<int64_t>(b) * cin * h * wd, cin, h, wd, kh,
                           kw, cs, ho, wo, cols.data());
            EMap<T>(gw.data(), cout, kdim).noalias() += gy * ECMap<T>(cols.data(), kdim, ncol).transpose();
          }
          if (x.requires_grad()) {
            EMap<T>(gcols.data(), kdim, ncol).noalias() =
                ECMap<T>(w.val().data(), cout, kdim).transpose() * gy;
            detail::col2im_add(gcols.data(), cin, h, wd, kh, kw, cs, ho, wo,
                               gx.data() + static_cast<int64_t>(b) * cin * h * wd);
          }
        }
        if (w.requires_grad()) w.node()->accum(gw);
        if (x.requires_grad()) x.node()->accum(gx);
        if (bias.defined() && bias.requires_grad()) {
          Tensor<T> gb(bias.val().shape);
          for (int b = 0; b < n; ++b)
            for (int c = 0; c < cout; ++c) {
              const T* p = self.grad.data() + (static_cast<int64_t>(b) * cout + c) * ncol;
              double acc = 0;
              for (int64_t i = 0; i < ncol; ++i) acc += p[i];
              gb.v[c] += static_cast<T>(acc);
            }
          bias.node()->accum(gb);
        }
      });
}

/// Transposed 2-D convolution, NCHW. w: [cin, cout, kh, kw].
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const Conv2dSpec& cs) {
  const auto& xs = x.val().shape;
  const auto& ws = w.val().shape;
  const int n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const int cout = ws[1], kh = ws[2], kw = ws[3];
  if (ws[0] != cin) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int ho = (h - 1) * cs.sh - 2 * cs.ph + cs.dh * (kh - 1) + 1;
  const int wo = (wd - 1) * cs.sw - 2 * cs.pw + cs.dw * (kw - 1) + 1;
  const int kdim = cout * kh * kw;
  const int64_t nin = static_cast<int64_t>(h) * wd;

  Tensor<T> y({n, cout, ho, wo});
  std::vector<T> cols(static_cast<size_t>(kdim) * nin);
  for (int b = 0; b < n; ++b) {
    // cols[(co,ky,kx), (ih,iw)] = sum_ci w[ci,co,ky,kx] * x[b,ci,ih,iw]
    EMap<T>(cols.data(), kdim, nin).noalias() =
        ECMap<T>(w.val().data(), cin, kdim).transpose() *
        ECMap<T>(x.val().data() + static_cast<int64_t>(b) * cin * nin, cin, nin);
    T* yb = y.data() + static_cast<int64_t>(b) * cout * ho * wo;
    for (int co = 0; co < cout; ++co)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T* src = cols.data() + ((static_cast<int64_t>(co) * kh + ky) * kw + kx) * nin;
          for (int iy = 0; iy < h; ++iy) {
            const int oy = iy * cs.sh - cs.ph + ky * cs.dh;
            if (oy < 0 || oy >= ho) continue;
            T* dst = yb + (static_cast<int64_t>(co) * ho + oy) * wo;
            for (int ix = 0; ix < wd; ++ix) {
              const int ox = ix * cs.sw - cs.pw + kx * cs.dw;
              if (ox >= 0 && ox < wo) dst[ox] += src[static_cast<int64_t>(iy) * wd + ix];
            }
          }
        }
  }
  if (bias.defined())
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < cout; ++c) {
        T* p = y.data() + (static_cast<int64_t>(b) * cout + c) * ho * wo;
        for (int64_t i = 0; i < static_cast<int64_t>(ho) * wo; ++i) p[i] += bias.val().v[c];
      }

  std::vector<Var<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  return Var<T>::make(
      std::move(y), parents,
      [x, w, bias, cs, n, cin, h, wd, cout, kh, kw, ho, wo, kdim,
       nin](typename Var<T>::Node& self) mutable {
        Tensor<T> gw, gx;
        if (w.requires_grad()) gw = Tensor<T>::zeros(w.val().shape);
        if (x.requires_grad()) gx = Tensor<T>::zeros(x.val().shape);
        std::vector<T> gcols(static_cast<size_t>(kdim) * nin);
        for (int b = 0; b < n; ++b) {
          // gather d cols from dy
          const T* gyb = self.grad.data() + static_cast<int64_t>(b) * cout * ho * wo;
          for (int co = 0; co < cout; ++co)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                T* dst = gcols.data() + ((static_cast<int64_t>(co) * kh + ky) * kw + kx) * nin;
                for (int iy = 0; iy < h; ++iy) {
                  const int oy = iy * cs.sh - cs.ph + ky * cs.dh;
                  const T* grow = (oy >= 0 && oy < ho)
                                      ? gyb + (static_cast<int64_t>(co) * ho + oy) * wo
                                      : nullptr;
                  for (int ix = 0; ix < wd; ++ix) {
                    const int ox = ix * cs.sw - cs.pw + kx * cs.dw;
                    dst[static_cast<int64_t>(iy) * wd + ix] =
                        (grow && ox >= 0 && ox < wo) ? grow[ox] : T(0);
                  }
                }
              }
          if (x.requires_grad())
            EMap<T>(gx.data() + static_cast<int64_t>(b) * cin * nin, cin, nin).noalias() =
                ECMap<T>(w.val().data(), cin, kdim) * ECMap<T>(gcols.data(), kdim, nin);
          if (w.requires_grad())
            EMap<T>(gw.data(), cin, kdim).noalias() +=
                ECMap<T>(x.val().data() + static_cast<int64_t>(b) * cin * nin, cin, nin) *
                ECMap<T>(gcols.data(), kdim, nin).transpose();
        }
        if (x.requires_grad()) x.node()->accum(gx);
        if (w.requires_grad()) w.node()->accum(gw);
        if (bias.defined() && bias.requires_grad()) {
          Tensor<T> gb(bias.val().shape);
          const int64_t plane = static_cast<int64_t>(ho) * wo;
          for (int b = 0; b < n; ++b)
            for (int c = 0; c < cout; ++c) {
              const T* p = self.grad.data() + (static_cast<int64_t>(b) * cout + c) * plane;
              double acc = 0;
              for (int64_t i = 0; i < plane; ++i) acc += p[i];
              gb.v[c] += static_cast<T>(acc);
            }
          bias.node()->accum(gb);
        }
      });
}

/// Non-overlapping max pooling (stride == kernel).
template <class T>
Var<T> max_pool2d(const Var<T>& x, int kh, int kw) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int ho = h / kh, wo = w / kw;
  Tensor<T> y({n, c, ho, wo});
  std::vector<int64_t> arg(static_cast<size_t>(y.numel()));
  int64_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t bi = 0;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int64_t idx =
                  ((static_cast<int64_t>(b) * c + ci) * h + oy * kh + ky) * w + ox * kw + kx;
              if (x.val().v[static_cast<size_t>(idx)] > best) {
                best = x.val().v[static_cast<size_t>(idx)];
                bi = idx;
              }
            }
          y.v[static_cast<size_t>(o)] = best;
          arg[static_cast<size_t>(o)] = bi;
        }
  return Var<T>::make(std::move(y), {x}, [x, arg = std::move(arg)](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (size_t i = 0; i < self.grad.v.size(); ++i) g.v[static_cast<size_t>(arg[i])] += self.grad.v[i];
    x.node()->accum(g);
  });
}

}  // namespace c3
