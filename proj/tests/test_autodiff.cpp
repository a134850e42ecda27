// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "c3/ctc.hpp"
#include "c3/deform.hpp"
#include "c3/nn.hpp"
#include "testutil.hpp"

using namespace c3;
using c3test::gradcheck;
using c3test::random_tensor;

using VarD = Var<double>;

TEST_CASE("matmul against hand computation") {
  VarD a(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  VarD b(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  VarD y = matmul(a, b);
  CHECK(y.val().v == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(7);
  auto x = random_tensor({3, 4}, rng);
  auto y = random_tensor({3, 4}, rng, 0.1, 2.0);

  CHECK(gradcheck([](std::vector<VarD>& v) { return mean_all(mul(v[0], v[1])); }, {x, y}) < 1e-5);
  CHECK(gradcheck([](std::vector<VarD>& v) { return mean_all(square(sub(v[0], v[1]))); }, {x, y}) < 1e-5);
  CHECK(gradcheck([](std::vector<VarD>& v) { return mean_all(sigmoid(v[0])); }, {x}) < 1e-5);
  CHECK(gradcheck([](std::vector<VarD>& v) { return mean_all(tanh_op(v[0])); }, {x}) < 1e-5);
  CHECK(gradcheck([](std::vector<VarD>& v) { return mean_all(log_op(v[1])); }, {x, y}) < 1e-5);
  CHECK(gradcheck([](std::vector<VarD>& v) { return sum_all(affine(v[0], 2.5, -1.0)); }, {x}) < 1e-5);
}

TEST_CASE("softmax rows sum to one and gradients check") {
  Rng rng(11);
  auto x = random_tensor({5, 7}, rng, -2, 2);
  VarD v(x);
  VarD s = softmax_lastdim(v);
  for (int r = 0; r < 5; ++r) {
    double acc = 0;
    for (int c = 0; c < 7; ++c) acc += s.val().at(r, c);
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-9));
  }
  auto w = random_tensor({5, 7}, rng);
  CHECK(gradcheck([&](std::vector<VarD>& v) { return mean_all(mul(softmax_lastdim(v[0]), constant(w))); },
                  {x}) < 1e-5);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) { return mean_all(mul(log_softmax_lastdim(v[0]), constant(w))); },
            {x}) < 1e-5);
  CHECK(gradcheck([&](std::vector<VarD>& v) { return mean_all(mul(softmax_dim0(v[0]), constant(w))); },
                  {x}) < 1e-5);
}

TEST_CASE("matmul bmm layernorm gradients") {
  Rng rng(13);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng);
  auto w = random_tensor({3, 5}, rng);
  CHECK(gradcheck([&](std::vector<VarD>& v) { return mean_all(mul(matmul(v[0], v[1]), constant(w))); },
                  {a, b}) < 1e-5);

  auto ba = random_tensor({2, 3, 4}, rng);
  auto bb = random_tensor({2, 4, 5}, rng);
  auto bw = random_tensor({2, 3, 5}, rng);
  CHECK(gradcheck([&](std::vector<VarD>& v) { return mean_all(mul(bmm(v[0], v[1]), constant(bw))); },
                  {ba, bb}) < 1e-5);

  auto x = random_tensor({6, 8}, rng);
  auto gm = random_tensor({8}, rng, 0.5, 1.5);
  auto bt = random_tensor({8}, rng);
  auto rw = random_tensor({6, 8}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(mul(layernorm_lastdim(v[0], v[1], v[2]), constant(rw)));
            },
            {x, gm, bt}) < 2e-5);
}

TEST_CASE("shape ops round-trip and gradients") {
  Rng rng(17);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  auto w = random_tensor({2 * 3 * 4 * 5}, rng);

  auto readout = [&](VarD t) { return mean_all(mul(reshape(t, {2 * 3 * 4 * 5}), constant(w))); };
  CHECK(gradcheck([&](std::vector<VarD>& v) { return readout(wseq_to_nchw(nchw_to_wseq(v[0]), 2, 4)); },
                  {x}) < 1e-5);
  CHECK(gradcheck([&](std::vector<VarD>& v) { return readout(hseq_to_nchw(nchw_to_hseq(v[0]), 2, 5)); },
                  {x}) < 1e-5);

  // permute round trips preserve values exactly
  VarD v(x);
  CHECK(wseq_to_nchw(nchw_to_wseq(v), 2, 4).val().v == x.v);
  CHECK(hseq_to_nchw(nchw_to_hseq(v), 2, 5).val().v == x.v);

  auto a = random_tensor({4, 6}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(concat_lastdim<double>({slice_lastdim(v[0], 0, 2), slice_lastdim(v[0], 2, 6)}));
            },
            {a}) < 1e-5);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(square(concat_rows<double>({slice_rows(v[0], 1, 3), slice_rows(v[0], 0, 1)})));
            },
            {a}) < 1e-5);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(square(concat_channels<double>(
                  {slice_channels(v[0], 0, 1), slice_channels(v[0], 1, 3)})));
            },
            {x}) < 1e-5);
}

// independent direct convolution oracle
static Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                                   const Tensor<double>& b, const Conv2dSpec& cs) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = conv_out_dim(h, kh, cs.sh, cs.ph, cs.dh);
  const int wo = conv_out_dim(wd, kw, cs.sw, cs.pw, cs.dw);
  Tensor<double> y({n, cout, ho, wo});
  for (int bi = 0; bi < n; ++bi)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b.empty() ? 0.0 : b.v[co];
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * cs.sh - cs.ph + ky * cs.dh;
                const int ix = ox * cs.sw - cs.pw + kx * cs.dw;
                if (iy >= 0 && iy < h && ix >= 0 && ix < wd)
                  acc += x.at(bi, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(bi, co, oy, ox) = acc;
        }
  return y;
}

TEST_CASE("conv2d matches naive convolution and gradients check") {
  Rng rng(19);
  for (const auto& [stride, pad, dil] : std::vector<std::array<int, 3>>{{1, 1, 1}, {2, 1, 1}, {1, 2, 2}}) {
    auto x = random_tensor({2, 3, 6, 7}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    Conv2dSpec cs;
    cs.sh = cs.sw = stride;
    cs.ph = cs.pw = pad;
    cs.dh = cs.dw = dil;
    VarD y = conv2d(VarD(x), VarD(w), VarD(b), cs);
    Tensor<double> ref = naive_conv2d(x, w, b, cs);
    REQUIRE(y.val().shape == ref.shape);
    for (size_t i = 0; i < ref.v.size(); ++i) CHECK(y.val().v[i] == doctest::Approx(ref.v[i]).epsilon(1e-10));

    auto rw = random_tensor(ref.shape, rng);
    CHECK(gradcheck(
              [&](std::vector<VarD>& v) {
                return mean_all(mul(conv2d(v[0], v[1], v[2], cs), constant(rw)));
              },
              {x, w, b}) < 1e-5);
  }
}

TEST_CASE("conv_transpose2d inverts stride geometry and gradients check") {
  Rng rng(23);
  auto x = random_tensor({2, 3, 2, 5}, rng);
  auto w = random_tensor({3, 4, 2, 2}, rng);
  auto b = random_tensor({4}, rng);
  Conv2dSpec cs;
  cs.sh = cs.sw = 2;
  VarD y = conv_transpose2d(VarD(x), VarD(w), VarD(b), cs);
  CHECK(y.val().shape == Shape{2, 4, 4, 10});

  auto rw = random_tensor(y.val().shape, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(mul(conv_transpose2d(v[0], v[1], v[2], cs), constant(rw)));
            },
            {x, w, b}) < 1e-5);

  // 1x1 kernel, stride 1: transposed conv is a plain channel mix
  auto x1 = random_tensor({1, 2, 3, 3}, rng);
  auto w1 = random_tensor({2, 3, 1, 1}, rng);
  VarD t = conv_transpose2d(VarD(x1), VarD(w1), VarD(), Conv2dSpec{});
  for (int co = 0; co < 3; ++co)
    for (int i = 0; i < 9; ++i) {
      double acc = 0;
      for (int ci = 0; ci < 2; ++ci) acc += x1.v[ci * 9 + i] * w1.at(ci, co, 0, 0);
      CHECK(t.val().v[co * 9 + i] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("max_pool2d forward and gradient") {
  Tensor<double> x({1, 1, 2, 4}, {1, 5, 2, 3, 4, 0, 7, 1});
  VarD y = max_pool2d(VarD(x), 2, 2);
  CHECK(y.val().v == std::vector<double>{5, 7});
  Rng rng(27);
  auto xr = random_tensor({2, 3, 4, 6}, rng);
  auto rw = random_tensor({2, 3, 2, 3}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) { return mean_all(mul(max_pool2d(v[0], 2, 2), constant(rw))); },
            {xr}, 1e-6) < 1e-4);
}

TEST_CASE("bilinear resize and pixel shuffle") {
  // resize of a linear ramp is exact
  Tensor<double> ramp({1, 1, 1, 3}, {0, 1, 2});
  VarD up = bilinear_resize(VarD(ramp), 1, 5);
  CHECK(up.val().v[1] == doctest::Approx(0.5));
  CHECK(up.val().v[3] == doctest::Approx(1.5));

  Rng rng(29);
  auto x = random_tensor({2, 2, 3, 4}, rng);
  auto rw = random_tensor({2, 2, 6, 9}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) { return mean_all(mul(bilinear_resize(v[0], 6, 9), constant(rw))); },
            {x}) < 1e-5);

  auto ps = random_tensor({1, 8, 2, 3}, rng);
  VarD shuffled = pixel_shuffle(VarD(ps), 2);
  CHECK(shuffled.val().shape == Shape{1, 2, 4, 6});
  // spot-check the sub-pixel layout
  CHECK(shuffled.val().at(0, 0, 0, 0) == ps.at(0, 0, 0, 0));
  CHECK(shuffled.val().at(0, 0, 0, 1) == ps.at(0, 1, 0, 0));
  CHECK(shuffled.val().at(0, 0, 1, 0) == ps.at(0, 2, 0, 0));
  CHECK(shuffled.val().at(0, 0, 1, 1) == ps.at(0, 3, 0, 0));
  CHECK(shuffled.val().at(0, 1, 2, 4) == ps.at(0, 4 + 0, 1, 2));
  auto rw2 = random_tensor({1, 2, 4, 6}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) { return mean_all(mul(pixel_shuffle(v[0], 2), constant(rw2))); },
            {ps}) < 1e-5);
}

TEST_CASE("affine grid sample: identity transform reproduces input") {
  Rng rng(31);
  auto x = random_tensor({2, 3, 5, 8}, rng);
  Tensor<double> theta({2, 2, 3}, {1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0});
  VarD grid = affine_grid(VarD(theta), 5, 8);
  VarD y = grid_sample(VarD(x), grid);
  for (size_t i = 0; i < x.v.size(); ++i) CHECK(y.val().v[i] == doctest::Approx(x.v[i]).epsilon(1e-9));
}

TEST_CASE("grid sample gradients w.r.t. input and theta") {
  Rng rng(37);
  auto x = random_tensor({1, 2, 5, 8}, rng);
  // interior warp, fractional sampling positions keep FD off bilinear kinks
  Tensor<double> theta({1, 2, 3}, {0.93, 0.021, 0.013, -0.017, 0.91, 0.024});
  auto rw = random_tensor({1, 2, 5, 8}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(mul(grid_sample(v[0], affine_grid(v[1], 5, 8)), constant(rw)));
            },
            {x, theta}, 1e-6) < 1e-4);
}

TEST_CASE("deformable conv matches plain conv at zero offsets") {
  Rng rng(41);
  auto x = random_tensor({2, 3, 5, 6}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  Tensor<double> off({2, 18, 5, 6});
  VarD y = deform_conv2d(VarD(x), VarD(off), VarD(w), VarD(b));
  Conv2dSpec cs;
  cs.ph = cs.pw = 1;
  Tensor<double> ref = naive_conv2d(x, w, b, cs);
  for (size_t i = 0; i < ref.v.size(); ++i) CHECK(y.val().v[i] == doctest::Approx(ref.v[i]).epsilon(1e-9));
}

TEST_CASE("deformable conv gradients w.r.t. input, offsets, weights") {
  Rng rng(43);
  auto x = random_tensor({1, 2, 4, 5}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  // fractional offsets keep sampling off bilinear kinks
  Tensor<double> off({1, 18, 4, 5});
  for (auto& o : off.v) o = rng.uniform(-0.4, 0.4) + (rng.uniform() < 0.5 ? 0.3 : -0.3);
  auto rw = random_tensor({1, 3, 4, 5}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(mul(deform_conv2d(v[0], v[1], v[2], v[3]), constant(rw)));
            },
            {x, off, w, b}, 1e-6) < 1e-4);
}

TEST_CASE("batchnorm train mode: zero mean unit variance, gradients check") {
  Rng rng(47);
  auto x = random_tensor({3, 2, 4, 5}, rng);
  auto gm = random_tensor({2}, rng, 0.5, 1.5);
  auto bt = random_tensor({2}, rng);
  {
    VarD y = detail::batchnorm_train(VarD(x), VarD(Tensor<double>::full({2}, 1.0)),
                                     VarD(Tensor<double>::zeros({2})), 1e-9, (std::vector<double>*)nullptr, (std::vector<double>*)nullptr);
    for (int c = 0; c < 2; ++c) {
      double mean = 0, var = 0;
      for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 20; ++i) mean += y.val().v[(b * 2 + c) * 20 + i];
      mean /= 60;
      for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 20; ++i) {
          const double d = y.val().v[(b * 2 + c) * 20 + i] - mean;
          var += d * d;
        }
      var /= 60;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  auto rw = random_tensor({3, 2, 4, 5}, rng);
  CHECK(gradcheck(
            [&](std::vector<VarD>& v) {
              return mean_all(mul(
                  detail::batchnorm_train(v[0], v[1], v[2], 1e-5, (std::vector<double>*)nullptr, (std::vector<double>*)nullptr), constant(rw)));
            },
            {x, gm, bt}) < 1e-4);
}

TEST_CASE("gru step gradients through a short sequence") {
  Rng rng(53);
  GRU<double> gru(3, 4, rng);
  auto x = random_tensor({5, 2, 3}, rng);
  auto rw = random_tensor({5, 2, 4}, rng);
  auto run = [&](std::vector<VarD>& v) {
    GRU<double> g = gru;  // copies parameter tensors
    g.wx = v[0];
    g.wh = v[1];
    g.bx = v[2];
    g.bh = v[3];
    return mean_all(mul(g.forward(v[4]), constant(rw)));
  };
  CHECK(gradcheck(run, {gru.wx.val(), gru.wh.val(), gru.bx.val(), gru.bh.val(), x}) < 1e-4);
}

// brute force CTC likelihood: enumerate all alignment paths
static double ctc_brute_force(const Tensor<double>& probs, const std::vector<int>& label, int blank) {
  const int len = probs.dim(0), na = probs.dim(1);
  double total = 0;
  std::vector<int> path(static_cast<size_t>(len));
  std::function<void(int, double)> rec = [&](int t, double p) {
    if (t == len) {
      std::vector<int> collapsed;
      int prev = -1;
      for (int i = 0; i < len; ++i) {
        if (path[static_cast<size_t>(i)] != prev && path[static_cast<size_t>(i)] != blank)
          collapsed.push_back(path[static_cast<size_t>(i)]);
        prev = path[static_cast<size_t>(i)];
      }
      if (collapsed == label) total += p;
      return;
    }
    for (int a = 0; a < na; ++a) {
      path[static_cast<size_t>(t)] = a;
      rec(t + 1, p * probs.at(t, a));
    }
  };
  rec(0, 1.0);
  return total;
}

TEST_CASE("ctc loss equals brute-force path enumeration") {
  Rng rng(59);
  const int len = 4, na = 3, blank = 2;
  Tensor<double> logits({1, len, na});
  for (auto& x : logits.v) x = rng.uniform(-1, 1);
  Tensor<double> probs({len, na});
  for (int t = 0; t < len; ++t) {
    double mx = -1e30;
    for (int a = 0; a < na; ++a) mx = std::max(mx, logits.at(0, t, a));
    double s = 0;
    for (int a = 0; a < na; ++a) s += std::exp(logits.at(0, t, a) - mx);
    for (int a = 0; a < na; ++a) probs.at(t, a) = std::exp(logits.at(0, t, a) - mx) / s;
  }
  for (const std::vector<int>& label : {std::vector<int>{0, 1}, {0}, {1, 1}, {0, 1, 0}}) {
    const double ref = -std::log(ctc_brute_force(probs, label, blank));
    VarD loss = ctc_loss(VarD(logits), {label}, blank);
    CHECK(loss.val().v[0] == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("ctc loss gradient matches finite differences") {
  Rng rng(61);
  Tensor<double> logits({2, 5, 4});
  for (auto& x : logits.v) x = rng.uniform(-1, 1);
  const std::vector<std::vector<int>> labels = {{0, 1}, {2, 2, 1}};
  CHECK(gradcheck([&](std::vector<VarD>& v) { return ctc_loss(v[0], labels, 3); }, {logits}) < 1e-5);
}

TEST_CASE("kl_rows zero at identity and gradcheck") {
  Rng rng(67);
  Tensor<double> p({3, 4});
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 4; ++c) {
      p.at(r, c) = rng.uniform(0.05, 1.0);
      s += p.at(r, c);
    }
    for (int c = 0; c < 4; ++c) p.at(r, c) /= s;
  }
  VarD k0 = kl_rows(VarD(p), VarD(p));
  CHECK(k0.val().v[0] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor<double> q = p;
  std::reverse(q.v.begin(), q.v.end());
  CHECK(kl_rows(VarD(p), VarD(q)).val().v[0] > 0.0);
  CHECK(gradcheck([&](std::vector<VarD>& v) { return kl_rows(v[0], v[1]); }, {p, q}) < 1e-5);
}

TEST_CASE("detach cuts the tape") {
  Tensor<double> x({2}, {1.0, 2.0});
  VarD a(x, true);
  VarD y = mean_all(mul(a.detach(), a));
  c3::backward(y);
  // d/da of mean(c * a) with c = detach(a): gradient is c / n, not 2a / n
  CHECK(a.grad().v[0] == doctest::Approx(0.5));
  CHECK(a.grad().v[1] == doctest::Approx(1.0));
}
