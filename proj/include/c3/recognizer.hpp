// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3/alphabet.hpp"
#include "c3/ctc.hpp"
#include "c3/image_ops.hpp"
#include "c3/nn.hpp"

namespace c3 {

inline constexpr int kMaxLen = 16;  // L, the max predicted length

/// Rows sum to 1 within tol and entries lie in [0,1]. Works on [L,A] and [B,L,A].
template <class T>
bool probseq_valid(const Tensor<T>& p, double tol = 1e-5) {
  const int na = p.shape.back();
  const int64_t rows = p.numel() / na;
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0;
    for (int i = 0; i < na; ++i) {
      const double v = p.v[static_cast<size_t>(r * na + i)];
      if (!(v >= -1e-7 && v <= 1.0 + 1e-6)) return false;
      s += v;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

/// Per-position argmax, CTC-collapsed: merge adjacent repeats, drop blanks.
template <class T>
std::string decode_greedy(const Tensor<T>& probs, const Alphabet& alphabet) {
  const int na = probs.shape.back();
  const int64_t len = probs.numel() / na;
  std::string out;
  int prev = -1;
  for (int64_t t = 0; t < len; ++t) {
    const T* row = probs.data() + t * na;
    int best = 0;
    for (int i = 1; i < na; ++i)
      if (row[i] > row[best]) best = i;
    if (best != prev && best != alphabet.blank()) out += alphabet.char_at(best);
    prev = best;
  }
  return out;
}

/// k1 * L1(student, teacher) + k2 * KL(student || teacher).
/// The teacher must already be detached by the caller.
template <class T>
Var<T> distill_pair_loss(const Var<T>& student, const Var<T>& teacher, T k1, T k2) {
  check_same_shape(student.val(), teacher.val(), "distill_pair_loss");
  return add(scale(mean_abs_diff(student, teacher), k1), scale(kl_rows(student, teacher), k2));
}

/// Small convolutional-recurrent CTC recognizer (the feedback model R).
/// 3x16x64 in, [B, L, |A|] out.
template <class T>
struct CrnnRecognizer : Module<T> {
  Conv2d<T> c1, c2, c3;
  BatchNorm2d<T> bn1, bn2, bn3;
  BiGRU<T> gru;
  Linear<T> head;
  Alphabet alphabet;
  bool frozen = false;

  CrnnRecognizer() = default;
  explicit CrnnRecognizer(Rng& rng)
      : c1(Conv2d<T>::same(3, 32, 3, rng)),
        c2(Conv2d<T>::same(32, 64, 3, rng)),
        c3(Conv2d<T>::same(64, 128, 3, rng)),
        bn1(32),
        bn2(64),
        bn3(128),
        gru(128, 64, rng),
        head(128, alphabet.size(), rng) {}

  /// [B, L, |A|] raw scores.
  Var<T> logits(const Var<T>& image, bool training) {
    const auto& s = image.val().shape;
    if (s[1] != 3) throw std::invalid_argument("recognizer: expected 3 channels");
    Var<T> x = image;
    if (s[2] != kLrHeightT() || s[3] != kLrWidthT()) x = bilinear_resize(x, kLrHeightT(), kLrWidthT());
    x = max_pool2d(relu(bn1.forward(c1.forward(x), training)), 2, 2);   // 32 x 8 x 32
    x = max_pool2d(relu(bn2.forward(c2.forward(x), training)), 2, 2);   // 64 x 4 x 16
    x = max_pool2d(relu(bn3.forward(c3.forward(x), training)), 4, 1);   // 128 x 1 x 16
    Var<T> seq = nchw_to_wseq(x);                                       // [16, B, 128]
    Var<T> rec = gru.forward(seq);                                      // [16, B, 128]
    const int b = s[0];
    Var<T> flat = reshape(rec, {kMaxLen * b, 128});
    Var<T> out = head.forward(flat);
    return swap01_3d(reshape(out, {kMaxLen, b, alphabet.size()}));  // [B, L, A]
  }

  /// Row-stochastic probability feedback R(I).
  Var<T> recognize(const Var<T>& image, bool training = false) {
    return softmax_lastdim(logits(image, training));
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    c1.collect(p + ".c1", r);
    c2.collect(p + ".c2", r);
    c3.collect(p + ".c3", r);
    bn1.collect(p + ".bn1", r);
    bn2.collect(p + ".bn2", r);
    bn3.collect(p + ".bn3", r);
    gru.collect(p + ".gru", r);
    head.collect(p + ".head", r);
  }

  static constexpr int kLrHeightT() { return 16; }
  static constexpr int kLrWidthT() { return 64; }
};

/// Attention-decoder recognizer used by the text-focused loss. Trained in
/// stage 0, then frozen. Emits per-step attention maps over a 4x16 grid.
template <class T>
struct AttnRecognizer : Module<T> {
  static constexpr int kGridH = 4, kGridW = 16, kMem = 128, kAtt = 128, kState = 128;
  Conv2d<T> e1, e2, e3;
  BatchNorm2d<T> bn1, bn2, bn3;
  Linear<T> mem_att, state_att, state0;
  Var<T> att_v;
  GRU<T> dec;
  Linear<T> head;
  Alphabet alphabet;
  bool frozen = false;

  AttnRecognizer() = default;
  explicit AttnRecognizer(Rng& rng)
      : e1(3, 32, 3, rng, stride2()),
        e2(32, 64, 3, rng, stride2()),
        e3(64, kMem, 3, rng, stride2()),
        bn1(32),
        bn2(64),
        bn3(kMem),
        mem_att(kMem, kAtt, rng),
        state_att(kState, kAtt, rng),
        state0(kMem, kState, rng),
        dec(kMem, kState, rng),
        head(kState, alphabet.size(), rng) {
    att_v = Var<T>(uniform_init<T>({kAtt, 1}, 1.0 / std::sqrt(static_cast<double>(kAtt)), rng), true);
  }

  static Conv2dSpec stride2() {
    Conv2dSpec cs;
    cs.sh = cs.sw = 2;
    cs.ph = cs.pw = 1;
    return cs;
  }

  struct Output {
    Var<T> attn;    // [B, T, gridH, gridW], rows sum to 1
    Var<T> logits;  // [B, T, |A|]
    Var<T> probs;   // [B, T, |A|]
  };

  Output forward(const Var<T>& image, bool training) {
    const auto& s = image.val().shape;
    if (s[1] != 3) throw std::invalid_argument("attention recognizer: expected 3 channels");
    Var<T> x = image;
    if (s[2] != kHrHeightT() || s[3] != kHrWidthT()) x = bilinear_resize(x, kHrHeightT(), kHrWidthT());
    x = relu(bn1.forward(e1.forward(x), training));  // 32 x 16 x 64
    x = relu(bn2.forward(e2.forward(x), training));  // 64 x 8 x 32
    x = relu(bn3.forward(e3.forward(x), training));  // 128 x 4 x 16
    const int b = s[0], hw = kGridH * kGridW;
    Var<T> mem = nchw_to_tokens(x);  // [B, 64, 128]
    Var<T> mem_flat = reshape(mem, {b * hw, kMem});
    Var<T> mem_proj = reshape(mem_att.forward(mem_flat), {b, hw, kAtt});

    // initial state from the mean memory vector
    Var<T> mean_mem = scale(sum_rows_tokens(mem, b, hw), static_cast<T>(1.0 / hw));
    Var<T> state = tanh_op(state0.forward(mean_mem));  // [B, kState]

    std::vector<Var<T>> att_steps, logit_steps;
    for (int t = 0; t < kMaxLen; ++t) {
      Var<T> e = add_broadcast_seq(mem_proj, state_att.forward(state));       // [B,hw,kAtt]
      Var<T> scores = reshape(matmul(reshape(tanh_op(e), {b * hw, kAtt}), att_v), {b, hw});
      Var<T> alpha = softmax_lastdim(scores);                                 // [B,hw]
      Var<T> ctx = reshape(bmm(reshape(alpha, {b, 1, hw}), mem), {b, kMem});  // [B,kMem]
      Var<T> xp = add_bias_lastdim(matmul(ctx, dec.wx), dec.bx);
      state = dec.step(xp, state);
      att_steps.push_back(alpha);
      logit_steps.push_back(head.forward(state));
    }
    Output out;
    Var<T> att = reshape(concat_rows(att_steps), {kMaxLen, b, hw});
    out.attn = reshape(swap01_3d(att), {b, kMaxLen, kGridH, kGridW});
    Var<T> lg = reshape(concat_rows(logit_steps), {kMaxLen, b, alphabet.size()});
    out.logits = swap01_3d(lg);
    out.probs = softmax_lastdim(out.logits);
    return out;
  }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    e1.collect(p + ".e1", r);
    e2.collect(p + ".e2", r);
    e3.collect(p + ".e3", r);
    bn1.collect(p + ".bn1", r);
    bn2.collect(p + ".bn2", r);
    bn3.collect(p + ".bn3", r);
    mem_att.collect(p + ".mem_att", r);
    state_att.collect(p + ".state_att", r);
    state0.collect(p + ".state0", r);
    r.param(p + ".att_v", &att_v);
    dec.collect(p + ".dec", r);
    head.collect(p + ".head", r);
  }

  static constexpr int kHrHeightT() { return 32; }
  static constexpr int kHrWidthT() { return 128; }

 private:
  // mean over the token axis of [B, S, D] -> [B, D]
  static Var<T> sum_rows_tokens(const Var<T>& mem, int b, int s) {
    const int d = mem.val().shape[2];
    Tensor<T> ones({b, 1, s}, T(1));
    return reshape(bmm(constant(std::move(ones)), mem), {b, d});
  }
};

}  // namespace c3
