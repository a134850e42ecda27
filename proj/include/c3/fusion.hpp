// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>

#include "c3/cluegen.hpp"

namespace c3 {

/// Which of (rec, ling, vis) participate in fusion. Disabled clues are fed as
/// zero maps and the mask is renormalized over the active ones.
struct ClueSwitches {
  bool rec = true, ling = true, vis = true;
  int active() const { return static_cast<int>(rec) + static_cast<int>(ling) + static_cast<int>(vis); }
  bool operator[](int i) const { return i == 0 ? rec : (i == 1 ? ling : vis); }
};

/// Modified gated fusion: per-clue dilated feature stacks, stacked with the
/// LR image, conv group -> mask M in R^{3 x C' x N}, softmax over the clue
/// axis, then pixel multiplication and addition.
template <class T>
struct GatedFusion : Module<T> {
  Conv2d<T> d1[3], d2[3];  // dilations 1 and 2, non-shared per clue
  Conv2d<T> m1, m2;

  GatedFusion() = default;
  explicit GatedFusion(Rng& rng)
      : m1(Conv2d<T>::same(3 * 16 + 3, 64, 3, rng)),
        m2(Conv2d<T>::same(64, 3 * kClueChannels, 3, rng)) {
    for (int i = 0; i < 3; ++i) {
      d1[i] = Conv2d<T>::same(kClueChannels, 16, 3, rng, /*dilation=*/1);
      d2[i] = Conv2d<T>::same(16, 16, 3, rng, /*dilation=*/2);
    }
  }

  /// Per-(clue, channel, pixel) mask entries; inactive clue rows are zero and
  /// active rows softmax to 1. Returns the three [B,C',H,W] mask slices.
  std::array<Var<T>, 3> compute_mask(const Var<T>& h_rec, const Var<T>& h_ling, const Var<T>& h_vis,
                                     const Var<T>& lr, const ClueSwitches& sw = {}) {
    const Var<T>* clues[3] = {&h_rec, &h_ling, &h_vis};
    const auto& s = h_rec.val().shape;
    const int b = s[0], h = s[2], w = s[3];
    if (lr.val().shape[2] != h || lr.val().shape[3] != w)
      throw std::invalid_argument("gated fusion: LR spatial mismatch");
    if (sw.active() == 0) throw std::invalid_argument("gated fusion: no active clue");

    std::vector<Var<T>> feats;
    for (int i = 0; i < 3; ++i) feats.push_back(relu(d2[i].forward(relu(d1[i].forward(*clues[i])))));
    feats.push_back(lr);
    Var<T> logits = m2.forward(relu(m1.forward(concat_channels(feats))));  // [B,3C',H,W]

    std::array<Var<T>, 3> slices = {slice_channels(logits, 0, kClueChannels),
                                    slice_channels(logits, kClueChannels, 2 * kClueChannels),
                                    slice_channels(logits, 2 * kClueChannels, 3 * kClueChannels)};
    // softmax over the active clue rows only
    std::vector<int> act;
    for (int i = 0; i < 3; ++i)
      if (sw[i]) act.push_back(i);
    std::vector<Var<T>> stack;
    for (int i : act) stack.push_back(reshape(slices[static_cast<size_t>(i)], {b, 1, kClueChannels * h * w}));
    Var<T> sm = softmax_axis1_3d(concat_lastdim_axis1(stack));
    std::array<Var<T>, 3> mask;
    for (size_t j = 0; j < act.size(); ++j)
      mask[static_cast<size_t>(act[j])] =
          reshape(slice_axis1(sm, static_cast<int>(j)), {b, kClueChannels, h, w});
    for (int i = 0; i < 3; ++i)
      if (!sw[i]) mask[static_cast<size_t>(i)] = constant(Tensor<T>::zeros({b, kClueChannels, h, w}));
    return mask;
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    for (int i = 0; i < 3; ++i) {
      d1[i].collect(p + ".d1_" + std::to_string(i), r);
      d2[i].collect(p + ".d2_" + std::to_string(i), r);
    }
    m1.collect(p + ".m1", r);
    m2.collect(p + ".m2", r);
  }

 private:
  // [B,1,M] list -> [B,K,M]
  static Var<T> concat_lastdim_axis1(const std::vector<Var<T>>& parts) {
    std::vector<Var<T>> swapped;
    for (const auto& p : parts) {
      const auto& s = p.val().shape;
      swapped.push_back(reshape(p, {s[0], s[2]}));
    }
    // build [K, B, M] then swap
    std::vector<Var<T>> rows;
    for (const auto& p : swapped) {
      const auto& s = p.val().shape;
      rows.push_back(reshape(p, {1, s[0], s[1]}));
    }
    return swap01_3d(concat_rows(rows));
  }
  static Var<T> slice_axis1(const Var<T>& x, int k) {
    // x: [B,K,M] -> [B,M]
    Var<T> swapped = swap01_3d(x);  // [K,B,M]
    const auto& s = swapped.val().shape;
    return reshape(slice_rows(swapped, k, k + 1), {s[1], s[2]});
  }
};

/// Eq-style fusion: h_t = sum_i m_i (x) h_i, the elementwise convex
/// combination of the clue maps.
template <class T>
Var<T> fuse_clues(const std::array<Var<T>, 3>& mask, const Var<T>& h_rec, const Var<T>& h_ling,
                  const Var<T>& h_vis) {
  return add(add(mul(mask[0], h_rec), mul(mask[1], h_ling)), mul(mask[2], h_vis));
}

/// Ablation baseline: per-pixel attention over the three clues.
template <class T>
struct MhaFusion : Module<T> {
  Conv2d<T> q_conv, k_conv[3];
  MhaFusion() = default;
  explicit MhaFusion(Rng& rng) : q_conv(Conv2d<T>::same(3 * kClueChannels + 3, kClueChannels, 1, rng)) {
    for (int i = 0; i < 3; ++i) k_conv[i] = Conv2d<T>::same(kClueChannels, kClueChannels, 1, rng);
  }
  Var<T> forward(const Var<T>& h_rec, const Var<T>& h_ling, const Var<T>& h_vis, const Var<T>& lr) {
    const Var<T>* clues[3] = {&h_rec, &h_ling, &h_vis};
    const auto& s = h_rec.val().shape;
    const int b = s[0], h = s[2], w = s[3];
    Var<T> q = q_conv.forward(concat_channels<T>({h_rec, h_ling, h_vis, lr}));
    std::vector<Var<T>> scores;
    for (int i = 0; i < 3; ++i) {
      Var<T> k = k_conv[i].forward(*clues[i]);
      // channel-summed dot product -> per-pixel score [B,1,H,W]
      Var<T> prod = mul(q, k);
      Var<T> summed = channel_sum(prod);
      scores.push_back(reshape(scale(summed, static_cast<T>(1.0 / std::sqrt(double(kClueChannels)))),
                               {b, 1, h * w}));
    }
    Var<T> att = softmax_axis1_3d(concat_axis1(scores));  // [B,3,HW]
    Var<T> out = constant(Tensor<T>::zeros(h_rec.val().shape));
    for (int i = 0; i < 3; ++i) {
      Var<T> a = reshape(slice_one(att, i), {b, 1, h, w});
      out = add(out, mul_broadcast_channel(*clues[i], a));
    }
    return out;
  }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    q_conv.collect(p + ".q_conv", r);
    for (int i = 0; i < 3; ++i) k_conv[i].collect(p + ".k_conv" + std::to_string(i), r);
  }

 private:
  static Var<T> channel_sum(const Var<T>& x) {
    const auto& s = x.val().shape;
    Tensor<T> ones({1, s[1], 1, 1}, T(1));
    Conv2dSpec cs;  // 1x1 conv with all-ones kernel sums channels
    return conv2d(x, constant(std::move(ones)), Var<T>(), cs);
  }
  static Var<T> concat_axis1(const std::vector<Var<T>>& parts) {
    std::vector<Var<T>> rows;
    for (const auto& p : parts) {
      const auto& s = p.val().shape;
      rows.push_back(reshape(p, {1, s[0], s[2]}));
    }
    return swap01_3d(concat_rows(rows));
  }
  static Var<T> slice_one(const Var<T>& x, int k) {
    Var<T> sw = swap01_3d(x);
    const auto& s = sw.val().shape;
    return reshape(slice_rows(sw, k, k + 1), {s[1], s[2]});
  }
};

/// Ablation baseline: deformable-convolution merge of the stacked clues.
template <class T>
struct DcnFusion : Module<T> {
  Conv2d<T> offset_conv;
  Var<T> dc_w, dc_b;
  DcnFusion() = default;
  explicit DcnFusion(Rng& rng)
      : offset_conv(3 * kClueChannels, 18, 3, rng, same_spec(3), /*zero_init=*/true) {
    const double bound = 1.0 / std::sqrt(3.0 * kClueChannels * 9);
    dc_w = Var<T>(uniform_init<T>({kClueChannels, 3 * kClueChannels, 3, 3}, bound, rng), true);
    dc_b = Var<T>(uniform_init<T>({kClueChannels}, bound, rng), true);
  }
  Var<T> forward(const Var<T>& h_rec, const Var<T>& h_ling, const Var<T>& h_vis) {
    Var<T> z = concat_channels<T>({h_rec, h_ling, h_vis});
    return deform_conv2d(z, offset_conv.forward(z), dc_w, dc_b);
  }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    offset_conv.collect(p + ".offset_conv", r);
    r.param(p + ".dc_w", &dc_w);
    r.param(p + ".dc_b", &dc_b);
  }
};

}  // namespace c3
