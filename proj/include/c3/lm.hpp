// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3/alphabet.hpp"
#include "c3/nn.hpp"
#include "c3/recognizer.hpp"

namespace c3 {

/// Bidirectional cloze-style character corrector: ProbSeq in, ProbSeq out.
/// Two self-attention encoder layers over the L positions.
template <class T>
struct ClozeLm : Module<T> {
  static constexpr int kDim = 64, kFf = 128, kLayers = 2;

  struct Layer : Module<T> {
    Linear<T> wq, wk, wv, wo, ff1, ff2;
    Var<T> ln1_g, ln1_b, ln2_g, ln2_b;
    Layer() = default;
    explicit Layer(Rng& rng)
        : wq(kDim, kDim, rng),
          wk(kDim, kDim, rng),
          wv(kDim, kDim, rng),
          wo(kDim, kDim, rng),
          ff1(kDim, kFf, rng),
          ff2(kFf, kDim, rng) {
      ln1_g = Var<T>(Tensor<T>::full({kDim}, T(1)), true);
      ln1_b = Var<T>(Tensor<T>::zeros({kDim}), true);
      ln2_g = Var<T>(Tensor<T>::full({kDim}, T(1)), true);
      ln2_b = Var<T>(Tensor<T>::zeros({kDim}), true);
    }
    Var<T> forward(const Var<T>& x /* [B,L,D] */) {
      const int b = x.val().shape[0], l = x.val().shape[1];
      auto proj = [&](Linear<T>& lin, const Var<T>& t) {
        return reshape(lin.forward(reshape(t, {b * l, kDim})), {b, l, kDim});
      };
      Var<T> q = proj(wq, x), k = proj(wk, x), v = proj(wv, x);
      Var<T> scores = scale(bmm(q, transpose_bmm(k)), static_cast<T>(1.0 / std::sqrt(double(kDim))));
      Var<T> att = softmax_lastdim(scores);  // [B,L,L]
      Var<T> mixed = proj(wo, bmm(att, v));
      Var<T> h = layernorm_lastdim(add(x, mixed), ln1_g, ln1_b);
      Var<T> ff = reshape(ff2.forward(relu(ff1.forward(reshape(h, {b * l, kDim})))), {b, l, kDim});
      return layernorm_lastdim(add(h, ff), ln2_g, ln2_b);
    }
    void collect(const std::string& p, ParamRegistry<T>& r) override {
      wq.collect(p + ".wq", r);
      wk.collect(p + ".wk", r);
      wv.collect(p + ".wv", r);
      wo.collect(p + ".wo", r);
      ff1.collect(p + ".ff1", r);
      ff2.collect(p + ".ff2", r);
      r.param(p + ".ln1_g", &ln1_g);
      r.param(p + ".ln1_b", &ln1_b);
      r.param(p + ".ln2_g", &ln2_g);
      r.param(p + ".ln2_b", &ln2_b);
    }
  };

  Linear<T> embed;
  Var<T> pos;
  Layer layers[kLayers];
  Linear<T> head;
  Alphabet alphabet;
  bool pretrained = false;

  ClozeLm() = default;
  explicit ClozeLm(Rng& rng)
      : embed(Alphabet().size(), kDim, rng), head(kDim, Alphabet().size(), rng) {
    pos = Var<T>(uniform_init<T>({kMaxLen, kDim}, 0.1, rng), true);
    for (auto& l : layers) l = Layer(rng);
  }

  /// [B,L,A] -> [B,L,A] raw scores.
  Var<T> logits(const Var<T>& p) {
    const auto& s = p.val().shape;
    if (s[1] != kMaxLen || s[2] != alphabet.size())
      throw std::invalid_argument("lm: ProbSeq shape mismatch, want L=" + std::to_string(kMaxLen) +
                                  " |A|=" + std::to_string(alphabet.size()));
    const int b = s[0];
    Var<T> x = reshape(embed.forward(reshape(p, {b * kMaxLen, alphabet.size()})), {b, kMaxLen, kDim});
    x = add_broadcast_batch(x, pos);
    for (auto& l : layers) x = l.forward(x);
    return reshape(head.forward(reshape(x, {b * kMaxLen, kDim})), {b, kMaxLen, alphabet.size()});
  }

  /// Corrected row-stochastic ProbSeq p_LM.
  Var<T> correct(const Var<T>& p) { return softmax_lastdim(logits(p)); }

  void collect(const std::string& p, ParamRegistry<T>& r) override {
    embed.collect(p + ".embed", r);
    r.param(p + ".pos", &pos);
    for (int i = 0; i < kLayers; ++i) layers[i].collect(p + ".layer" + std::to_string(i), r);
    head.collect(p + ".head", r);
  }
};

/// One-hot [B,L,A] encoding of a word, blank-padded, optionally label-smoothed.
template <class T>
Tensor<T> encode_text_probseq(const std::vector<std::string>& words, const Alphabet& alphabet,
                              T smoothing = T(0)) {
  const int b = static_cast<int>(words.size());
  const int na = alphabet.size();
  Tensor<T> p({b, kMaxLen, na}, smoothing / static_cast<T>(na));
  const T hot = T(1) - smoothing + smoothing / static_cast<T>(na);
  for (int i = 0; i < b; ++i) {
    const std::string& w = words[static_cast<size_t>(i)];
    for (int t = 0; t < kMaxLen; ++t) {
      const int id = t < static_cast<int>(w.size()) ? alphabet.id_of(w[static_cast<size_t>(t)])
                                                    : alphabet.blank();
      p.at(i, t, id) = hot;
    }
  }
  return p;
}

}  // namespace c3
