// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3/ops.hpp"

namespace c3 {

/// Bilinear resize to (h2, w2), align_corners semantics.
template <class T>
Var<T> bilinear_resize(const Var<T>& x, int h2, int w2) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const double ry = h2 > 1 ? static_cast<double>(h - 1) / (h2 - 1) : 0.0;
  const double rx = w2 > 1 ? static_cast<double>(w - 1) / (w2 - 1) : 0.0;
  Tensor<T> y({n, c, h2, w2});
  std::vector<int> iy0(static_cast<size_t>(h2)), ix0(static_cast<size_t>(w2));
  std::vector<T> fy(static_cast<size_t>(h2)), fx(static_cast<size_t>(w2));
  for (int oy = 0; oy < h2; ++oy) {
    const double py = oy * ry;
    int y0 = std::min(static_cast<int>(py), h - 2);
    y0 = std::max(y0, 0);
    iy0[static_cast<size_t>(oy)] = y0;
    fy[static_cast<size_t>(oy)] = h > 1 ? static_cast<T>(py - y0) : T(0);
  }
  for (int ox = 0; ox < w2; ++ox) {
    const double px = ox * rx;
    int x0 = std::min(static_cast<int>(px), w - 2);
    x0 = std::max(x0, 0);
    ix0[static_cast<size_t>(ox)] = x0;
    fx[static_cast<size_t>(ox)] = w > 1 ? static_cast<T>(px - x0) : T(0);
  }
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      const T* src = x.val().data() + (static_cast<int64_t>(b) * c + ci) * h * w;
      T* dst = y.data() + (static_cast<int64_t>(b) * c + ci) * h2 * w2;
      for (int oy = 0; oy < h2; ++oy) {
        const int y0 = iy0[static_cast<size_t>(oy)];
        const T gy = fy[static_cast<size_t>(oy)];
        const int y1 = h > 1 ? y0 + 1 : y0;
        for (int ox = 0; ox < w2; ++ox) {
          const int x0 = ix0[static_cast<size_t>(ox)];
          const T gx = fx[static_cast<size_t>(ox)];
          const int x1 = w > 1 ? x0 + 1 : x0;
          dst[static_cast<int64_t>(oy) * w2 + ox] =
              (T(1) - gy) * ((T(1) - gx) * src[y0 * w + x0] + gx * src[y0 * w + x1]) +
              gy * ((T(1) - gx) * src[y1 * w + x0] + gx * src[y1 * w + x1]);
        }
      }
    }
  return Var<T>::make(
      std::move(y), {x},
      [x, n, c, h, w, h2, w2, iy0 = std::move(iy0), ix0 = std::move(ix0), fy = std::move(fy),
       fx = std::move(fx)](typename Var<T>::Node& self) mutable {
        Tensor<T> g(x.val().shape);
        for (int b = 0; b < n; ++b)
          for (int ci = 0; ci < c; ++ci) {
            T* dst = g.data() + (static_cast<int64_t>(b) * c + ci) * h * w;
            const T* gy_p = self.grad.data() + (static_cast<int64_t>(b) * c + ci) * h2 * w2;
            for (int oy = 0; oy < h2; ++oy) {
              const int y0 = iy0[static_cast<size_t>(oy)];
              const T vy = fy[static_cast<size_t>(oy)];
              const int y1 = h > 1 ? y0 + 1 : y0;
              for (int ox = 0; ox < w2; ++ox) {
                const int x0 = ix0[static_cast<size_t>(ox)];
                const T vx = fx[static_cast<size_t>(ox)];
                const int x1 = w > 1 ? x0 + 1 : x0;
                const T gg = gy_p[static_cast<int64_t>(oy) * w2 + ox];
                dst[y0 * w + x0] += (T(1) - vy) * (T(1) - vx) * gg;
                dst[y0 * w + x1] += (T(1) - vy) * vx * gg;
                dst[y1 * w + x0] += vy * (T(1) - vx) * gg;
                dst[y1 * w + x1] += vy * vx * gg;
              }
            }
          }
        x.node()->accum(g);
      });
}

/// Sub-pixel rearrangement: [N, C*r^2, H, W] -> [N, C, H*r, W*r].
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  const auto& s = x.val().shape;
  const int n = s[0], cr = s[1], h = s[2], w = s[3];
  const int c = cr / (r * r);
  if (c * r * r != cr) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
  Tensor<T> y({n, c, h * r, w * r});
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const T* src =
              x.val().data() + ((static_cast<int64_t>(b) * cr + ci * r * r + dy * r + dx) * h) * w;
          for (int iy = 0; iy < h; ++iy) {
            T* dst = y.data() + ((static_cast<int64_t>(b) * c + ci) * (h * r) + iy * r + dy) * (w * r) + dx;
            for (int ix = 0; ix < w; ++ix) dst[static_cast<int64_t>(ix) * r] = src[iy * w + ix];
          }
        }
  return Var<T>::make(std::move(y), {x}, [x, n, cr, c, h, w, r](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx) {
            T* dst = g.data() + ((static_cast<int64_t>(b) * cr + ci * r * r + dy * r + dx) * h) * w;
            for (int iy = 0; iy < h; ++iy) {
              const T* src = self.grad.data() +
                             ((static_cast<int64_t>(b) * c + ci) * (h * r) + iy * r + dy) * (w * r) + dx;
              for (int ix = 0; ix < w; ++ix) dst[iy * w + ix] = src[static_cast<int64_t>(ix) * r];
            }
          }
    x.node()->accum(g);
  });
}

/// theta: [B,2,3] -> sampling grid [B,H,W,2] in normalized [-1,1] coords.
template <class T>
Var<T> affine_grid(const Var<T>& theta, int h, int w) {
  const int n = theta.val().shape[0];
  Tensor<T> y({n, h, w, 2});
  for (int b = 0; b < n; ++b) {
    const T* t = theta.val().data() + static_cast<int64_t>(b) * 6;
    for (int oy = 0; oy < h; ++oy) {
      const T yn = h > 1 ? static_cast<T>(-1.0 + 2.0 * oy / (h - 1)) : T(0);
      for (int ox = 0; ox < w; ++ox) {
        const T xn = w > 1 ? static_cast<T>(-1.0 + 2.0 * ox / (w - 1)) : T(0);
        T* dst = y.data() + ((static_cast<int64_t>(b) * h + oy) * w + ox) * 2;
        dst[0] = t[0] * xn + t[1] * yn + t[2];
        dst[1] = t[3] * xn + t[4] * yn + t[5];
      }
    }
  }
  return Var<T>::make(std::move(y), {theta}, [theta, n, h, w](typename Var<T>::Node& self) mutable {
    Tensor<T> g(theta.val().shape);
    for (int b = 0; b < n; ++b) {
      T* gt = g.data() + static_cast<int64_t>(b) * 6;
      for (int oy = 0; oy < h; ++oy) {
        const T yn = h > 1 ? static_cast<T>(-1.0 + 2.0 * oy / (h - 1)) : T(0);
        for (int ox = 0; ox < w; ++ox) {
          const T xn = w > 1 ? static_cast<T>(-1.0 + 2.0 * ox / (w - 1)) : T(0);
          const T* gg = self.grad.data() + ((static_cast<int64_t>(b) * h + oy) * w + ox) * 2;
          gt[0] += gg[0] * xn;
          gt[1] += gg[0] * yn;
          gt[2] += gg[0];
          gt[3] += gg[1] * xn;
          gt[4] += gg[1] * yn;
          gt[5] += gg[1];
        }
      }
    }
    theta.node()->accum(g);
  });
}

namespace detail {

template <class T>
inline void grid_sample_setup(T gx, T gy, int w, int h, int& x0, int& y0, T& fx, T& fy, bool& in_x,
                              bool& in_y) {
  T px = (gx + T(1)) * T(0.5) * (w - 1);
  T py = (gy + T(1)) * T(0.5) * (h - 1);
  in_x = px > T(0) && px < T(w - 1);
  in_y = py > T(0) && py < T(h - 1);
  px = std::min(static_cast<T>(w - 1), std::max(T(0), px));
  py = std::min(static_cast<T>(h - 1), std::max(T(0), py));
  x0 = std::min(static_cast<int>(px), w - 2);
  x0 = std::max(x0, 0);
  y0 = std::min(static_cast<int>(py), h - 2);
  y0 = std::max(y0, 0);
  fx = px - x0;
  fy = py - y0;
}

}  // namespace detail

/// Bilinear sampling of x at grid positions; border-clamped.
/// x: [B,C,H,W], grid: [B,Ho,Wo,2] -> [B,C,Ho,Wo].
template <class T>
Var<T> grid_sample(const Var<T>& x, const Var<T>& grid) {
  const auto& xs = x.val().shape;
  const auto& gs = grid.val().shape;
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = gs[1], wo = gs[2];
  Tensor<T> y({n, c, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const T* gp = grid.val().data() + ((static_cast<int64_t>(b) * ho + oy) * wo + ox) * 2;
        int x0, y0;
        T fx, fy;
        bool in_x, in_y;
        detail::grid_sample_setup(gp[0], gp[1], w, h, x0, y0, fx, fy, in_x, in_y);
        for (int ci = 0; ci < c; ++ci) {
          const T* src = x.val().data() + (static_cast<int64_t>(b) * c + ci) * h * w;
          y.at(b, ci, oy, ox) =
              (T(1) - fy) * ((T(1) - fx) * src[y0 * w + x0] + fx * src[y0 * w + x0 + 1]) +
              fy * ((T(1) - fx) * src[(y0 + 1) * w + x0] + fx * src[(y0 + 1) * w + x0 + 1]);
        }
      }
  return Var<T>::make(
      std::move(y), {x, grid},
      [x, grid, n, c, h, w, ho, wo](typename Var<T>::Node& self) mutable {
        Tensor<T> gx_t, gg_t;
        if (x.requires_grad()) gx_t = Tensor<T>::zeros(x.val().shape);
        if (grid.requires_grad()) gg_t = Tensor<T>::zeros(grid.val().shape);
        for (int b = 0; b < n; ++b)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              const T* gp = grid.val().data() + ((static_cast<int64_t>(b) * ho + oy) * wo + ox) * 2;
              int x0, y0;
              T fx, fy;
              bool in_x, in_y;
              detail::grid_sample_setup(gp[0], gp[1], w, h, x0, y0, fx, fy, in_x, in_y);
              T dpx = 0, dpy = 0;
              for (int ci = 0; ci < c; ++ci) {
                const T g = self.grad.at(b, ci, oy, ox);
                const T* src = x.val().data() + (static_cast<int64_t>(b) * c + ci) * h * w;
                const T v00 = src[y0 * w + x0], v01 = src[y0 * w + x0 + 1];
                const T v10 = src[(y0 + 1) * w + x0], v11 = src[(y0 + 1) * w + x0 + 1];
                if (x.requires_grad()) {
                  T* d = gx_t.data() + (static_cast<int64_t>(b) * c + ci) * h * w;
                  d[y0 * w + x0] += g * (T(1) - fy) * (T(1) - fx);
                  d[y0 * w + x0 + 1] += g * (T(1) - fy) * fx;
                  d[(y0 + 1) * w + x0] += g * fy * (T(1) - fx);
                  d[(y0 + 1) * w + x0 + 1] += g * fy * fx;
                }
                dpx += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                dpy += g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              }
              if (grid.requires_grad()) {
                T* d = gg_t.data() + ((static_cast<int64_t>(b) * ho + oy) * wo + ox) * 2;
                if (in_x) d[0] += dpx * T(0.5) * (w - 1);
                if (in_y) d[1] += dpy * T(0.5) * (h - 1);
              }
            }
        if (x.requires_grad()) x.node()->accum(gx_t);
        if (grid.requires_grad()) grid.node()->accum(gg_t);
      });
}

// ---------------------------------------------------------------------------
// NCHW <-> sequence permutes for recurrences over rows/columns

/// [N,C,H,W] -> [W, N*H, C] (sequence along width).
template <class T>
Var<T> nchw_to_wseq(const Var<T>& x) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> y({w, n * h, c});
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) y.at(ix, b * h + iy, ci) = x.val().at(b, ci, iy, ix);
  return Var<T>::make(std::move(y), {x}, [x, n, c, h, w](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) g.at(b, ci, iy, ix) = self.grad.at(ix, b * h + iy, ci);
    x.node()->accum(g);
  });
}

/// [W, N*H, C] -> [N,C,H,W].
template <class T>
Var<T> wseq_to_nchw(const Var<T>& x, int n, int h) {
  const auto& s = x.val().shape;
  const int w = s[0], c = s[2];
  Tensor<T> y({n, c, h, w});
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) y.at(b, ci, iy, ix) = x.val().at(ix, b * h + iy, ci);
  return Var<T>::make(std::move(y), {x}, [x, n, c, h, w](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) g.at(ix, b * h + iy, ci) = self.grad.at(b, ci, iy, ix);
    x.node()->accum(g);
  });
}

/// [N,C,H,W] -> [H, N*W, C] (sequence along height).
template <class T>
Var<T> nchw_to_hseq(const Var<T>& x) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> y({h, n * w, c});
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) y.at(iy, b * w + ix, ci) = x.val().at(b, ci, iy, ix);
  return Var<T>::make(std::move(y), {x}, [x, n, c, h, w](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) g.at(b, ci, iy, ix) = self.grad.at(iy, b * w + ix, ci);
    x.node()->accum(g);
  });
}

/// [H, N*W, C] -> [N,C,H,W].
template <class T>
Var<T> hseq_to_nchw(const Var<T>& x, int n, int w) {
  const auto& s = x.val().shape;
  const int h = s[0], c = s[2];
  Tensor<T> y({n, c, h, w});
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) y.at(b, ci, iy, ix) = x.val().at(iy, b * w + ix, ci);
  return Var<T>::make(std::move(y), {x}, [x, n, c, h, w](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) g.at(iy, b * w + ix, ci) = self.grad.at(b, ci, iy, ix);
    x.node()->accum(g);
  });
}

/// [N,C,H,W] -> [N, H*W, C] token layout for attention memories.
template <class T>
Var<T> nchw_to_tokens(const Var<T>& x) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> y({n, h * w, c});
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
        y.at(b, static_cast<int>(i), ci) = x.val().v[(static_cast<int64_t>(b) * c + ci) * h * w + i];
  return Var<T>::make(std::move(y), {x}, [x, n, c, h, w](typename Var<T>::Node& self) mutable {
    Tensor<T> g(x.val().shape);
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
          g.v[(static_cast<int64_t>(b) * c + ci) * h * w + i] = self.grad.at(b, static_cast<int>(i), ci);
    x.node()->accum(g);
  });
}

}  // namespace c3
