// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3/conv.hpp"

namespace c3 {

namespace detail {

/// Bilinear read with zero outside; v1..v4 and weights exposed for backward.
template <class T>
inline T deform_sample(const T* img, int h, int w, T py, T px) {
  if (py <= T(-1) || py >= static_cast<T>(h) || px <= T(-1) || px >= static_cast<T>(w)) return T(0);
  const int y0 = static_cast<int>(std::floor(py)), x0 = static_cast<int>(std::floor(px));
  const T fy = py - y0, fx = px - x0;
  auto at = [&](int yy, int xx) -> T {
    return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? img[yy * w + xx] : T(0);
  };
  return (T(1) - fy) * ((T(1) - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((T(1) - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

}  // namespace detail

/// Deformable convolution (v1), stride 1, same padding.
/// x: [N,Cin,H,W]; offsets: [N, 2*kh*kw, H, W] with channel 2k = dy, 2k+1 = dx
/// of kernel tap k; w: [Cout,Cin,kh,kw].
template <class T>
Var<T> deform_conv2d(const Var<T>& x, const Var<T>& offsets, const Var<T>& w, const Var<T>& bias) {
  const auto& xs = x.val().shape;
  const auto& ws = w.val().shape;
  const int n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const int cout = ws[0], kh = ws[2], kw = ws[3];
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int k = kh * kw;
  if (offsets.val().shape[1] != 2 * k) throw std::invalid_argument("deform_conv2d: offset channels");
  if (offsets.val().shape[2] != h || offsets.val().shape[3] != wd)
    throw std::invalid_argument("deform_conv2d: offset spatial mismatch");
  const int64_t npix = static_cast<int64_t>(h) * wd;
  const int kdim = cin * k;

  auto build_cols = [=](int b, std::vector<T>& cols) {
    const T* xb = x.val().data() + static_cast<int64_t>(b) * cin * npix;
    const T* ob = offsets.val().data() + static_cast<int64_t>(b) * 2 * k * npix;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const int tap = ky * kw + kx;
          T* dst = cols.data() + (static_cast<int64_t>(ci) * k + tap) * npix;
          const T* dy = ob + (2 * tap) * npix;
          const T* dx = ob + (2 * tap + 1) * npix;
          const T* img = xb + static_cast<int64_t>(ci) * npix;
          for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < wd; ++ox) {
              const int64_t p = static_cast<int64_t>(oy) * wd + ox;
              dst[p] = detail::deform_sample(img, h, wd, oy - ph + ky + dy[p], ox - pw + kx + dx[p]);
            }
        }
  };

  Tensor<T> y({n, cout, h, wd});
  std::vector<T> cols(static_cast<size_t>(kdim) * npix);
  for (int b = 0; b < n; ++b) {
    build_cols(b, cols);
    EMap<T>(y.data() + static_cast<int64_t>(b) * cout * npix, cout, npix).noalias() =
        ECMap<T>(w.val().data(), cout, kdim) * ECMap<T>(cols.data(), kdim, npix);
  }
  if (bias.defined())
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < cout; ++c) {
        T* p = y.data() + (static_cast<int64_t>(b) * cout + c) * npix;
        for (int64_t i = 0; i < npix; ++i) p[i] += bias.val().v[c];
      }

  std::vector<Var<T>> parents = {x, offsets, w};
  if (bias.defined()) parents.push_back(bias);
  return Var<T>::make(
      std::move(y), parents,
      [x, offsets, w, bias, build_cols, n, cin, h, wd, cout, kh, kw, ph, pw, k, kdim,
       npix](typename Var<T>::Node& self) mutable {
        Tensor<T> gx, go, gw;
        if (x.requires_grad()) gx = Tensor<T>::zeros(x.val().shape);
        if (offsets.requires_grad()) go = Tensor<T>::zeros(offsets.val().shape);
        if (w.requires_grad()) gw = Tensor<T>::zeros(w.val().shape);
        std::vector<T> cols(static_cast<size_t>(kdim) * npix);
        std::vector<T> gcols(static_cast<size_t>(kdim) * npix);
        for (int b = 0; b < n; ++b) {
          ECMap<T> gy(self.grad.data() + static_cast<int64_t>(b) * cout * npix, cout, npix);
          if (w.requires_grad()) {
            build_cols(b, cols);
            EMap<T>(gw.data(), cout, kdim).noalias() += gy * ECMap<T>(cols.data(), kdim, npix).transpose();
          }
          if (!x.requires_grad() && !offsets.requires_grad()) continue;
          EMap<T>(gcols.data(), kdim, npix).noalias() =
              ECMap<T>(w.val().data(), cout, kdim).transpose() * gy;
          const T* xb = x.val().data() + static_cast<int64_t>(b) * cin * npix;
          const T* ob = offsets.val().data() + static_cast<int64_t>(b) * 2 * k * npix;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int tap = ky * kw + kx;
                const T* gcol = gcols.data() + (static_cast<int64_t>(ci) * k + tap) * npix;
                const T* dy = ob + (2 * tap) * npix;
                const T* dx = ob + (2 * tap + 1) * npix;
                const T* img = xb + static_cast<int64_t>(ci) * npix;
                for (int oy = 0; oy < h; ++oy)
                  for (int ox = 0; ox < wd; ++ox) {
                    const int64_t p = static_cast<int64_t>(oy) * wd + ox;
                    const T g = gcol[p];
                    if (g == T(0)) continue;
                    const T py = oy - ph + ky + dy[p], px = ox - pw + kx + dx[p];
                    if (py <= T(-1) || py >= static_cast<T>(h) || px <= T(-1) ||
                        px >= static_cast<T>(wd))
                      continue;
                    const int y0 = static_cast<int>(std::floor(py));
                    const int x0 = static_cast<int>(std::floor(px));
                    const T fy = py - y0, fx = px - x0;
                    auto valid = [&](int yy, int xx) {
                      return yy >= 0 && yy < h && xx >= 0 && xx < wd;
                    };
                    auto atv = [&](int yy, int xx) -> T {
                      return valid(yy, xx) ? img[yy * wd + xx] : T(0);
                    };
                    if (x.requires_grad()) {
                      T* gimg = gx.data() + (static_cast<int64_t>(b) * cin + ci) * npix;
                      if (valid(y0, x0)) gimg[y0 * wd + x0] += g * (T(1) - fy) * (T(1) - fx);
                      if (valid(y0, x0 + 1)) gimg[y0 * wd + x0 + 1] += g * (T(1) - fy) * fx;
                      if (valid(y0 + 1, x0)) gimg[(y0 + 1) * wd + x0] += g * fy * (T(1) - fx);
                      if (valid(y0 + 1, x0 + 1)) gimg[(y0 + 1) * wd + x0 + 1] += g * fy * fx;
                    }
                    if (offsets.requires_grad()) {
                      const T v00 = atv(y0, x0), v01 = atv(y0, x0 + 1);
                      const T v10 = atv(y0 + 1, x0), v11 = atv(y0 + 1, x0 + 1);
                      T* gob = go.data() + static_cast<int64_t>(b) * 2 * k * npix;
                      gob[(2 * tap) * npix + p] += g * ((v10 - v00) * (T(1) - fx) + (v11 - v01) * fx);
                      gob[(2 * tap + 1) * npix + p] += g * ((v01 - v00) * (T(1) - fy) + (v11 - v10) * fy);
                    }
                  }
              }
        }
        if (x.requires_grad()) x.node()->accum(gx);
        if (offsets.requires_grad()) offsets.node()->accum(go);
        if (w.requires_grad()) w.node()->accum(gw);
        if (bias.defined() && bias.requires_grad()) {
          Tensor<T> gb(bias.val().shape);
          for (int b = 0; b < n; ++b)
            for (int c = 0; c < cout; ++c) {
              const T* p = self.grad.data() + (static_cast<int64_t>(b) * cout + c) * npix;
              double acc = 0;
              for (int64_t i = 0; i < npix; ++i) acc += p[i];
              gb.v[c] += static_cast<T>(acc);
            }
          bias.node()->accum(gb);
        }
      });
}

}  // namespace c3
