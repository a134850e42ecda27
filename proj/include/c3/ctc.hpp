// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>

#include "c3/ops.hpp"

namespace c3 {

namespace detail {

template <class T>
inline T log_add(T a, T b) {
  if (a == -std::numeric_limits<T>::infinity()) return b;
  if (b == -std::numeric_limits<T>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace detail

/// CTC negative log-likelihood, averaged over the batch.
/// logits: [B, L, A]; labels: per-sample id sequences (no blanks).
template <class T>
Var<T> ctc_loss(const Var<T>& logits, const std::vector<std::vector<int>>& labels, int blank) {
  const auto& s = logits.val().shape;
  const int bsz = s[0], len = s[1], na = s[2];
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();

  // log-softmax per (b, t)
  Tensor<T> logp = logits.val();
  for (int64_t r = 0; r < static_cast<int64_t>(bsz) * len; ++r) {
    T* p = logp.data() + r * na;
    T mx = p[0];
    for (int i = 1; i < na; ++i) mx = std::max(mx, p[i]);
    double acc = 0;
    for (int i = 0; i < na; ++i) acc += std::exp(static_cast<double>(p[i] - mx));
    const T lse = mx + static_cast<T>(std::log(acc));
    for (int i = 0; i < na; ++i) p[i] -= lse;
  }

  // grad w.r.t. logits computed alongside the loss (posterior form)
  Tensor<T> glogits(logits.val().shape);
  double total = 0;
  for (int b = 0; b < bsz; ++b) {
    const std::vector<int>& lab = labels[static_cast<size_t>(b)];
    const int u = static_cast<int>(lab.size());
    const int ns = 2 * u + 1;
    std::vector<int> ext(static_cast<size_t>(ns), blank);
    for (int i = 0; i < u; ++i) ext[static_cast<size_t>(2 * i + 1)] = lab[static_cast<size_t>(i)];

    const T* lp = logp.data() + static_cast<int64_t>(b) * len * na;
    std::vector<T> alpha(static_cast<size_t>(len) * ns, kNegInf);
    std::vector<T> beta(static_cast<size_t>(len) * ns, kNegInf);
    auto can_skip = [&](int st) {
      return st >= 2 && ext[static_cast<size_t>(st)] != blank &&
             ext[static_cast<size_t>(st)] != ext[static_cast<size_t>(st - 2)];
    };

    alpha[0] = lp[ext[0]];
    if (ns > 1) alpha[1] = lp[ext[1]];
    for (int t = 1; t < len; ++t)
      for (int st = 0; st < ns; ++st) {
        T a = alpha[static_cast<size_t>((t - 1) * ns + st)];
        if (st >= 1) a = detail::log_add(a, alpha[static_cast<size_t>((t - 1) * ns + st - 1)]);
        if (can_skip(st)) a = detail::log_add(a, alpha[static_cast<size_t>((t - 1) * ns + st - 2)]);
        alpha[static_cast<size_t>(t * ns + st)] = a + lp[static_cast<int64_t>(t) * na + ext[static_cast<size_t>(st)]];
      }

    beta[static_cast<size_t>((len - 1) * ns + ns - 1)] = lp[static_cast<int64_t>(len - 1) * na + ext[static_cast<size_t>(ns - 1)]];
    if (ns > 1)
      beta[static_cast<size_t>((len - 1) * ns + ns - 2)] = lp[static_cast<int64_t>(len - 1) * na + ext[static_cast<size_t>(ns - 2)]];
    for (int t = len - 2; t >= 0; --t)
      for (int st = ns - 1; st >= 0; --st) {
        T bsum = beta[static_cast<size_t>((t + 1) * ns + st)];
        if (st + 1 < ns) bsum = detail::log_add(bsum, beta[static_cast<size_t>((t + 1) * ns + st + 1)]);
        if (st + 2 < ns && can_skip(st + 2))
          bsum = detail::log_add(bsum, beta[static_cast<size_t>((t + 1) * ns + st + 2)]);
        beta[static_cast<size_t>(t * ns + st)] = bsum + lp[static_cast<int64_t>(t) * na + ext[static_cast<size_t>(st)]];
      }

    T ll = alpha[static_cast<size_t>((len - 1) * ns + ns - 1)];
    if (ns > 1) ll = detail::log_add(ll, alpha[static_cast<size_t>((len - 1) * ns + ns - 2)]);
    if (!std::isfinite(static_cast<double>(ll)))
      throw std::runtime_error("ctc_loss: infeasible label for sequence length");
    total -= static_cast<double>(ll);

    T* gb = glogits.data() + static_cast<int64_t>(b) * len * na;
    for (int t = 0; t < len; ++t) {
      // gamma over alphabet: sum of path posteriors per symbol
      std::vector<T> lgamma(static_cast<size_t>(na), kNegInf);
      for (int st = 0; st < ns; ++st) {
        // alpha*beta double-counts the emission at t
        const T v = alpha[static_cast<size_t>(t * ns + st)] + beta[static_cast<size_t>(t * ns + st)] -
                    lp[static_cast<int64_t>(t) * na + ext[static_cast<size_t>(st)]];
        auto& slot = lgamma[static_cast<size_t>(ext[static_cast<size_t>(st)])];
        slot = detail::log_add(slot, v);
      }
      for (int a = 0; a < na; ++a) {
        const T p = std::exp(lp[static_cast<int64_t>(t) * na + a]);
        const T g = lgamma[static_cast<size_t>(a)] == kNegInf
                        ? T(0)
                        : std::exp(lgamma[static_cast<size_t>(a)] - ll);
        gb[static_cast<int64_t>(t) * na + a] = (p - g) / static_cast<T>(bsz);
      }
    }
  }

  Tensor<T> y({1}, static_cast<T>(total / bsz));
  return Var<T>::make(std::move(y), {logits},
                      [logits, glogits = std::move(glogits)](typename Var<T>::Node& self) mutable {
                        Tensor<T> g = glogits;
                        const T gs = self.grad.v[0];
                        for (auto& x : g.v) x *= gs;
                        logits.node()->accum(g);
                      });
}

}  // namespace c3
