// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "c3/conv.hpp"
#include "c3/image_ops.hpp"
#include "c3/rng.hpp"

namespace c3 {

/// Named parameter/buffer registry. Parameters receive gradients; buffers
/// (e.g. batchnorm running stats) are persisted but not optimized.
template <class T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Var<T>*>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void param(const std::string& name, Var<T>* p) { params.push_back({name, p}); }
  void buffer(const std::string& name, Tensor<T>* b) { buffers.push_back({name, b}); }
};

template <class T>
struct Module {
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix, ParamRegistry<T>& reg) = 0;

  ParamRegistry<T> registry(const std::string& prefix = "") {
    ParamRegistry<T> reg;
    collect(prefix, reg);
    return reg;
  }

  std::map<std::string, Tensor<T>> state_dict(const std::string& prefix = "") {
    auto reg = registry(prefix);
    std::map<std::string, Tensor<T>> sd;
    for (auto& [name, p] : reg.params) sd[name] = p->val();
    for (auto& [name, b] : reg.buffers) sd[name] = *b;
    return sd;
  }

  void load_state_dict(const std::map<std::string, Tensor<T>>& sd, const std::string& prefix = "") {
    auto reg = registry(prefix);
    auto fetch = [&](const std::string& name) -> const Tensor<T>& {
      auto it = sd.find(name);
      if (it == sd.end()) throw std::runtime_error("state dict missing " + name);
      return it->second;
    };
    for (auto& [name, p] : reg.params) {
      const Tensor<T>& t = fetch(name);
      if (t.shape != p->val().shape)
        throw std::runtime_error("state dict shape mismatch for " + name);
      p->val() = t;
    }
    for (auto& [name, b] : reg.buffers) {
      const Tensor<T>& t = fetch(name);
      if (t.shape != b->shape) throw std::runtime_error("state dict shape mismatch for " + name);
      *b = t;
    }
  }

  void zero_grad() {
    auto reg = registry();
    for (auto& [name, p] : reg.params) p->zero_grad();
  }
};

// ---------------------------------------------------------------------------
// init helpers

template <class T>
Tensor<T> uniform_init(Shape s, double bound, Rng& rng) {
  Tensor<T> t(std::move(s));
  for (auto& x : t.v) x = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// layers

template <class T>
struct Linear : Module<T> {
  Var<T> w, b;
  Linear() = default;
  Linear(int in, int out, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    w = Var<T>(uniform_init<T>({in, out}, k, rng), true);
    b = Var<T>(uniform_init<T>({out}, k, rng), true);
  }
  Var<T> forward(const Var<T>& x) { return add_bias_lastdim(matmul(x, w), b); }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    r.param(p + ".w", &w);
    r.param(p + ".b", &b);
  }
};

/// Stride-1 same-padding spec for a square kernel.
inline Conv2dSpec same_spec(int k, int dilation = 1) {
  Conv2dSpec cs;
  cs.dh = cs.dw = dilation;
  cs.ph = cs.pw = dilation * (k - 1) / 2;
  return cs;
}

template <class T>
struct Conv2d : Module<T> {
  Var<T> w, b;
  Conv2dSpec spec;
  Conv2d() = default;
  Conv2d(int cin, int cout, int k, Rng& rng, Conv2dSpec cs = {}, bool zero_init = false) : spec(cs) {
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    w = Var<T>(uniform_init<T>({cout, cin, k, k}, bound, rng), true);
    b = Var<T>(uniform_init<T>({cout}, bound, rng), true);
  }
  /// square kernel, stride 1, same padding, optional dilation
  static Conv2d same(int cin, int cout, int k, Rng& rng, int dilation = 1) {
    Conv2dSpec cs;
    cs.dh = cs.dw = dilation;
    cs.ph = cs.pw = dilation * (k - 1) / 2;
    return Conv2d(cin, cout, k, rng, cs);
  }
  Var<T> forward(const Var<T>& x) { return conv2d(x, w, b, spec); }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    r.param(p + ".w", &w);
    r.param(p + ".b", &b);
  }
};

template <class T>
struct ConvT2d : Module<T> {
  Var<T> w, b;
  Conv2dSpec spec;
  ConvT2d() = default;
  ConvT2d(int cin, int cout, int kh, int kw, int sh, int sw, Rng& rng) {
    spec.sh = sh;
    spec.sw = sw;
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kh * kw);
    w = Var<T>(uniform_init<T>({cin, cout, kh, kw}, bound, rng), true);
    b = Var<T>(uniform_init<T>({cout}, bound, rng), true);
  }
  Var<T> forward(const Var<T>& x) { return conv_transpose2d(x, w, b, spec); }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    r.param(p + ".w", &w);
    r.param(p + ".b", &b);
  }
};

namespace detail {

/// Batchnorm training-mode forward with full backward through batch stats.
template <class T>
Var<T> batchnorm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                       std::vector<T>* out_mean, std::vector<T>* out_var) {
  const auto& s = x.val().shape;
  const int n = s[0], c = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  const int64_t m = static_cast<int64_t>(n) * plane;
  std::vector<T> mu(static_cast<size_t>(c)), var(static_cast<size_t>(c)), istd(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
    }
    const double mean = acc / static_cast<double>(m);
    double vacc = 0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i) vacc += (p[i] - mean) * (p[i] - mean);
    }
    const double v = vacc / static_cast<double>(m);
    mu[static_cast<size_t>(ci)] = static_cast<T>(mean);
    var[static_cast<size_t>(ci)] = static_cast<T>(v);
    istd[static_cast<size_t>(ci)] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
  }
  if (out_mean) *out_mean = mu;
  if (out_var) *out_var = var;
  Tensor<T> y(x.val().shape);
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      const T* p = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
      T* q = y.data() + (static_cast<int64_t>(b) * c + ci) * plane;
      const T g = gamma.val().v[ci], bt = beta.val().v[ci];
      const T mm = mu[static_cast<size_t>(ci)], is = istd[static_cast<size_t>(ci)];
      for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - mm) * is * g + bt;
    }
  return Var<T>::make(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, mu = std::move(mu), istd = std::move(istd), n, c, plane,
       m](typename Var<T>::Node& self) mutable {
        Tensor<T> gx, gg(gamma.val().shape), gb(beta.val().shape);
        if (x.requires_grad()) gx = Tensor<T>(x.val().shape);
        for (int ci = 0; ci < c; ++ci) {
          const T mm = mu[static_cast<size_t>(ci)], is = istd[static_cast<size_t>(ci)];
          const T gam = gamma.val().v[ci];
          double sum_gy = 0, sum_gy_xhat = 0;
          for (int b = 0; b < n; ++b) {
            const T* gy = self.grad.data() + (static_cast<int64_t>(b) * c + ci) * plane;
            const T* xv = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sum_gy += gy[i];
              sum_gy_xhat += static_cast<double>(gy[i]) * (xv[i] - mm) * is;
            }
          }
          gg.v[ci] += static_cast<T>(sum_gy_xhat);
          gb.v[ci] += static_cast<T>(sum_gy);
          if (x.requires_grad()) {
            const T c1 = static_cast<T>(sum_gy / static_cast<double>(m));
            const T c2 = static_cast<T>(sum_gy_xhat / static_cast<double>(m));
            for (int b = 0; b < n; ++b) {
              const T* gy = self.grad.data() + (static_cast<int64_t>(b) * c + ci) * plane;
              const T* xv = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
              T* d = gx.data() + (static_cast<int64_t>(b) * c + ci) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                const T xhat = (xv[i] - mm) * is;
                d[i] = gam * is * (gy[i] - c1 - xhat * c2);
              }
            }
          }
        }
        if (x.requires_grad()) x.node()->accum(gx);
        if (gamma.requires_grad()) gamma.node()->accum(gg);
        if (beta.requires_grad()) beta.node()->accum(gb);
      });
}

}  // namespace detail

template <class T>
struct BatchNorm2d : Module<T> {
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
  BatchNorm2d() = default;
  explicit BatchNorm2d(int c) {
    gamma = Var<T>(Tensor<T>::full({c}, T(1)), true);
    beta = Var<T>(Tensor<T>::zeros({c}), true);
    running_mean = Tensor<T>::zeros({c});
    running_var = Tensor<T>::full({c}, T(1));
  }
  Var<T> forward(const Var<T>& x, bool training) {
    if (training) {
      std::vector<T> mu, var;
      Var<T> y = detail::batchnorm_train(x, gamma, beta, eps, &mu, &var);
      const int c = running_mean.dim(0);
      for (int i = 0; i < c; ++i) {
        running_mean.v[i] = (T(1) - momentum) * running_mean.v[i] + momentum * mu[static_cast<size_t>(i)];
        running_var.v[i] = (T(1) - momentum) * running_var.v[i] + momentum * var[static_cast<size_t>(i)];
      }
      return y;
    }
    // eval: affine with running stats
    const auto& s = x.val().shape;
    const int n = s[0], c = s[1];
    const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
    Tensor<T> y(x.val().shape);
    std::vector<T> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
    for (int ci = 0; ci < c; ++ci) {
      const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.v[ci]) +
                                                  static_cast<double>(eps)));
      scale[static_cast<size_t>(ci)] = gamma.val().v[ci] * is;
      shift[static_cast<size_t>(ci)] = beta.val().v[ci] - running_mean.v[ci] * scale[static_cast<size_t>(ci)];
    }
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci) {
        const T* p = x.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
        T* q = y.data() + (static_cast<int64_t>(b) * c + ci) * plane;
        for (int64_t i = 0; i < plane; ++i) q[i] = p[i] * scale[static_cast<size_t>(ci)] + shift[static_cast<size_t>(ci)];
      }
    Var<T> gamma_v = gamma, beta_v = beta, xv = x;
    return Var<T>::make(std::move(y), {x, gamma, beta},
                        [xv, gamma_v, beta_v, scale, n, c, plane, rm = running_mean,
                         rv = running_var, e = eps](typename Var<T>::Node& self) mutable {
                          if (xv.requires_grad()) {
                            Tensor<T> g = self.grad;
                            for (int b = 0; b < n; ++b)
                              for (int ci = 0; ci < c; ++ci) {
                                T* p = g.data() + (static_cast<int64_t>(b) * c + ci) * plane;
                                for (int64_t i = 0; i < plane; ++i) p[i] *= scale[static_cast<size_t>(ci)];
                              }
                            xv.node()->accum(g);
                          }
                          if (gamma_v.requires_grad() || beta_v.requires_grad()) {
                            Tensor<T> gg(gamma_v.val().shape), gb(beta_v.val().shape);
                            for (int b = 0; b < n; ++b)
                              for (int ci = 0; ci < c; ++ci) {
                                const T* gy = self.grad.data() + (static_cast<int64_t>(b) * c + ci) * plane;
                                const T is = static_cast<T>(
                                    1.0 / std::sqrt(static_cast<double>(rv.v[ci]) + static_cast<double>(e)));
                                const T* xp = xv.val().data() + (static_cast<int64_t>(b) * c + ci) * plane;
                                double sg = 0, sgx = 0;
                                for (int64_t i = 0; i < plane; ++i) {
                                  sg += gy[i];
                                  sgx += static_cast<double>(gy[i]) * (xp[i] - rm.v[ci]) * is;
                                }
                                gg.v[ci] += static_cast<T>(sgx);
                                gb.v[ci] += static_cast<T>(sg);
                              }
                            if (gamma_v.requires_grad()) gamma_v.node()->accum(gg);
                            if (beta_v.requires_grad()) beta_v.node()->accum(gb);
                          }
                        });
  }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    r.param(p + ".gamma", &gamma);
    r.param(p + ".beta", &beta);
    r.buffer(p + ".running_mean", &running_mean);
    r.buffer(p + ".running_var", &running_var);
  }
};

/// Single-direction GRU over a [S, B, in] sequence.
template <class T>
struct GRU : Module<T> {
  Var<T> wx, wh, bx, bh;
  int hidden = 0;
  GRU() = default;
  GRU(int in, int h, Rng& rng) : hidden(h) {
    const double k = 1.0 / std::sqrt(static_cast<double>(h));
    wx = Var<T>(uniform_init<T>({in, 3 * h}, k, rng), true);
    wh = Var<T>(uniform_init<T>({h, 3 * h}, k, rng), true);
    bx = Var<T>(uniform_init<T>({3 * h}, k, rng), true);
    bh = Var<T>(uniform_init<T>({3 * h}, k, rng), true);
  }
  Var<T> step(const Var<T>& xp, Var<T>& h) {
    const int hd = hidden;
    Var<T> hp = add_bias_lastdim(matmul(h, wh), bh);
    Var<T> r = sigmoid(add(slice_lastdim(xp, 0, hd), slice_lastdim(hp, 0, hd)));
    Var<T> z = sigmoid(add(slice_lastdim(xp, hd, 2 * hd), slice_lastdim(hp, hd, 2 * hd)));
    Var<T> ng = tanh_op(add(slice_lastdim(xp, 2 * hd, 3 * hd), mul(r, slice_lastdim(hp, 2 * hd, 3 * hd))));
    h = add(mul(z, h), mul(affine(z, T(-1), T(1)), ng));
    return h;
  }
  /// returns [S, B, hidden]
  Var<T> forward(const Var<T>& x, bool reverse = false) {
    const int sq = x.val().shape[0], b = x.val().shape[1], in = x.val().shape[2];
    Var<T> flat = reshape(x, {sq * b, in});
    Var<T> xp_all = add_bias_lastdim(matmul(flat, wx), bx);
    Var<T> h = constant(Tensor<T>::zeros({b, hidden}));
    std::vector<Var<T>> outs(static_cast<size_t>(sq));
    for (int i = 0; i < sq; ++i) {
      const int t = reverse ? sq - 1 - i : i;
      Var<T> xp = slice_rows(xp_all, t * b, (t + 1) * b);
      outs[static_cast<size_t>(t)] = step(xp, h);
    }
    Var<T> cat = concat_rows(outs);
    return reshape(cat, {sq, b, hidden});
  }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    r.param(p + ".wx", &wx);
    r.param(p + ".wh", &wh);
    r.param(p + ".bx", &bx);
    r.param(p + ".bh", &bh);
  }
};

/// Bidirectional GRU; output features = 2 * hidden.
template <class T>
struct BiGRU : Module<T> {
  GRU<T> fwd, bwd;
  BiGRU() = default;
  BiGRU(int in, int h, Rng& rng) : fwd(in, h, rng), bwd(in, h, rng) {}
  Var<T> forward(const Var<T>& x) {
    return concat_lastdim<T>({fwd.forward(x, false), bwd.forward(x, true)});
  }
  void collect(const std::string& p, ParamRegistry<T>& r) override {
    fwd.collect(p + ".fwd", r);
    bwd.collect(p + ".bwd", r);
  }
};

// ---------------------------------------------------------------------------
// optimizer

template <class T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var<T>*>> params, T lr, T beta1 = T(0.9),
       T beta2 = T(0.999), T eps = T(1e-8), T clip_norm = T(0))
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), clip_(clip_norm) {
    for (auto& [name, p] : params_) {
      m_.push_back(Tensor<T>::zeros(p->val().shape));
      v_.push_back(Tensor<T>::zeros(p->val().shape));
    }
  }

  void set_lr(T lr) { lr_ = lr; }

  void step() {
    ++t_;
    if (clip_ > T(0)) {
      double norm2 = 0;
      for (auto& [name, p] : params_)
        if (!p->grad().empty())
          for (const T g : p->grad().v) norm2 += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm2);
      if (norm > static_cast<double>(clip_)) {
        const T s = static_cast<T>(static_cast<double>(clip_) / norm);
        for (auto& [name, p] : params_)
          if (!p->grad().empty())
            for (T& g : p->grad().v) g *= s;
      }
    }
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1_), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2_), t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Var<T>* p = params_[i].second;
      if (p->grad().empty()) continue;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (size_t j = 0; j < m.v.size(); ++j) {
        const T g = p->grad().v[j];
        m.v[j] = b1_ * m.v[j] + (T(1) - b1_) * g;
        v.v[j] = b2_ * v.v[j] + (T(1) - b2_) * g * g;
        const T mhat = m.v[j] / bc1;
        const T vhat = v.v[j] / bc2;
        p->val().v[j] -= lr_ * mhat / (static_cast<T>(std::sqrt(static_cast<double>(vhat))) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>*>> params_;
  std::vector<Tensor<T>> m_, v_;
  T lr_, b1_, b2_, eps_, clip_;
  int64_t t_ = 0;
};

}  // namespace c3
