// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3/deform.hpp"
#include "c3/lm.hpp"
#include "c3/nn.hpp"
#include "c3/textgen.hpp"

namespace c3 {

inline constexpr int kClueChannels = 32;  // C'

/// Deformable spatial attention: a [0,1] mask over (feature, guide) that
/// suppresses uncertain regions. Never amplifies: |out| <= |in| elementwise.
template <class T>
struct DstaBlock : Module<T> {
  Conv2d<T> offset_conv;
  Var<T> dc_w, dc_b;
  Conv2d<T> to_mask;
  int cin = 0;

  DstaBlock() = default;
  DstaBlock(int feature_ch, int guide_ch, Rng& rng) : cin(feature_ch + guide_ch) {
    offset_conv = Conv2d<T>(cin, 18, 3, rng, same_spec(3), /*zero_init=*/true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * 9);
    dc_w = Var<T>(uniform_init<T>({16, cin, 3, 3}, bound, rng), true);
    dc_b = Var<T>(uniform_init<T>({16}, bound, rng), true);
    to_mask = Conv2d<T>::same(16, 1, 3, rng);
  }

  Var<T> forward(const Var<T>& feature, const Var<T>* guide) {
    if (guide && (guide->val().shape[2] != feature.val().shape[2] ||
                  guide->val().shape[3] != feature.val().shape[3]))
      throw std::invalid_argument("dsta: spatial mismatch between feature and guide");
    Var<T> z = guide ? concat_channels<T>({feature, *guide}) : feature;
    if (z.val().shape[1] != cin) throw std::invalid_argument("dsta: channel mismatch");
    Var<T> off = offset_conv.forward(z);
    Var<T> a = relu(deform_conv2d(z, off, dc_w, dc_b));
    Var<T> m = sigmoid(to_mask.forward(a));  // [B,1,H,W]
    return mul_broadcast_channel(feature, m);
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    offset_conv.collect(p + ".offset_conv", r);
    r.param(p + ".dc_w", &dc_w);
    r.param(p + ".dc_b", &dc_b);
    to_mask.collect(p + ".to_mask", r);
  }
};

/// Four transposed convolutions + batchnorm + bilinear interpolation:
/// [B,L,|A|] ProbSeq -> [B,C',16,64] pixel feature map.
template <class T>
struct ProbSeqProjection : Module<T> {
  ConvT2d<T> t1, t2, t3, t4;
  BatchNorm2d<T> b1, b2, b3, b4;

  ProbSeqProjection() = default;
  explicit ProbSeqProjection(Rng& rng)
      : t1(Alphabet().size(), 64, 2, 2, 2, 2, rng),
        t2(64, 64, 2, 2, 2, 2, rng),
        t3(64, 48, 2, 1, 2, 1, rng),
        t4(48, kClueChannels, 2, 1, 2, 1, rng),
        b1(64),
        b2(64),
        b3(48),
        b4(kClueChannels) {}

  Var<T> forward(const Var<T>& p, bool training) {
    Var<T> x = probseq_to_image(p);                       // [B,A,1,16]
    x = relu(b1.forward(t1.forward(x), training));        // 64 x 2 x 32
    x = relu(b2.forward(t2.forward(x), training));        // 64 x 4 x 64
    x = relu(b3.forward(t3.forward(x), training));        // 48 x 8 x 64
    x = b4.forward(t4.forward(x), training);              // C' x 16 x 64
    return bilinear_resize(x, kLrHeight, kLrWidth);
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    t1.collect(p + ".t1", r);
    t2.collect(p + ".t2", r);
    t3.collect(p + ".t3", r);
    t4.collect(p + ".t4", r);
    b1.collect(p + ".b1", r);
    b2.collect(p + ".b2", r);
    b3.collect(p + ".b3", r);
    b4.collect(p + ".b4", r);
  }
};

/// f_rec / f_ling: projection + DSTA error masking.
template <class T>
struct ClueProjector : Module<T> {
  ProbSeqProjection<T> proj;
  DstaBlock<T> dsta;

  ClueProjector() = default;
  explicit ClueProjector(Rng& rng) : proj(rng), dsta(kClueChannels, 0, rng) {}

  Var<T> forward(const Var<T>& p, bool training, bool use_dsta) {
    Var<T> h = proj.forward(p, training);
    return use_dsta ? dsta.forward(h, nullptr) : h;
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    proj.collect(p + ".proj", r);
    dsta.collect(p + ".dsta", r);
  }
};

/// f_vis: deformable alignment of the painted skeleton, offsets conditioned
/// on h_rec, then DSTA guided by h_rec.
template <class T>
struct VisualClueExtractor : Module<T> {
  Conv2d<T> offset_from_rec;
  Var<T> dc_w, dc_b;
  BatchNorm2d<T> bn;
  Conv2d<T> mix;
  DstaBlock<T> dsta;
  bool compensate = true;  // offsets from h_rec; ablation switch

  VisualClueExtractor() = default;
  explicit VisualClueExtractor(Rng& rng)
      : offset_from_rec(kClueChannels, 18, 3, rng, same_spec(3), true),
        bn(kClueChannels),
        mix(Conv2d<T>::same(kClueChannels, kClueChannels, 3, rng)),
        dsta(kClueChannels, kClueChannels, rng) {
    const double bound = 1.0 / std::sqrt(6.0 * 9);
    dc_w = Var<T>(uniform_init<T>({kClueChannels, 6, 3, 3}, bound, rng), true);
    dc_b = Var<T>(uniform_init<T>({kClueChannels}, bound, rng), true);
  }

  /// skel: [B,6,16,64] (upper+lower variants stacked); h_rec: [B,C',16,64].
  Var<T> forward(const Var<T>& skel, const Var<T>& h_rec, bool training, bool use_dsta) {
    if (skel.val().shape[1] != 6) throw std::invalid_argument("visual clue: want 6 skeleton channels");
    Var<T> off = compensate
                     ? offset_from_rec.forward(h_rec)
                     : constant(Tensor<T>::zeros({skel.val().shape[0], 18, kLrHeight, kLrWidth}));
    Var<T> y = relu(bn.forward(deform_conv2d(skel, off, dc_w, dc_b), training));
    y = mix.forward(y);
    return use_dsta ? dsta.forward(y, &h_rec) : y;
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    offset_from_rec.collect(p + ".offset_from_rec", r);
    r.param(p + ".dc_w", &dc_w);
    r.param(p + ".dc_b", &dc_b);
    bn.collect(p + ".bn", r);
    mix.collect(p + ".mix", r);
    dsta.collect(p + ".dsta", r);
  }
};

/// Two fixed-font renders (uppercase, lowercase) of the decoded text at LR
/// geometry, stacked to [6,16,64]. Deterministic.
inline Tensor<float> paint_skeleton(const std::string& text, const FontSpec& font) {
  const Image up = render_skeleton_text(text, kLrWidth, kLrHeight, font, /*uppercase=*/true);
  const Image low = render_skeleton_text(text, kLrWidth, kLrHeight, font, /*uppercase=*/false);
  Tensor<float> t({2, 3, kLrHeight, kLrWidth});
  std::copy_n(up.v.data(), up.numel(), t.data());
  std::copy_n(low.v.data(), low.numel(), t.data() + up.numel());
  return t;
}

/// Batch of painted skeletons as the 6-channel tensor consumed by f_vis.
template <class T>
Tensor<T> paint_skeleton_batch(const std::vector<std::string>& texts, const FontSpec& font) {
  const int b = static_cast<int>(texts.size());
  Tensor<T> out({b, 6, kLrHeight, kLrWidth});
  const int64_t n = 6LL * kLrHeight * kLrWidth;
  for (int i = 0; i < b; ++i) {
    Tensor<float> s = paint_skeleton(texts[static_cast<size_t>(i)], font);
    for (int64_t j = 0; j < n; ++j) out.v[static_cast<size_t>(i * n + j)] = static_cast<T>(s.v[static_cast<size_t>(j)]);
  }
  return out;
}

}  // namespace c3
