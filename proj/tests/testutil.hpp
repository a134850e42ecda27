// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "c3/autodiff.hpp"
#include "c3/rng.hpp"

namespace c3test {

/// Central finite-difference check of reverse-mode gradients. `f` must build a
/// scalar loss from the given leaves. Checks up to `max_probe` elements per
/// input (all if fewer) and returns the worst relative error.
inline double gradcheck(
    const std::function<c3::Var<double>(std::vector<c3::Var<double>>&)>& f,
    std::vector<c3::Tensor<double>> inputs, double h = 1e-5, int max_probe = 64,
    uint64_t seed = 1234) {
  using c3::Tensor;
  using c3::Var;

  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (auto& t : inputs) leaves.emplace_back(t, true);
  Var<double> loss = f(leaves);
  c3::backward(loss);

  std::vector<Tensor<double>> analytic;
  for (auto& l : leaves)
    analytic.push_back(l.grad().empty() ? Tensor<double>::zeros(l.val().shape) : l.grad());

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    std::vector<Var<double>> vs;
    vs.reserve(vals.size());
    for (const auto& t : vals) vs.emplace_back(t, false);
    return f(vs).val().v[0];
  };

  c3::Rng rng(seed);
  double worst = 0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const int64_t n = inputs[k].numel();
    std::vector<int64_t> idx;
    if (n <= max_probe)
      for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    else
      for (int p = 0; p < max_probe; ++p) idx.push_back(rng.below(n));
    for (int64_t i : idx) {
      std::vector<Tensor<double>> vp = inputs, vm = inputs;
      vp[k].v[static_cast<size_t>(i)] += h;
      vm[k].v[static_cast<size_t>(i)] -= h;
      const double num = (eval(vp) - eval(vm)) / (2 * h);
      const double ana = analytic[k].v[static_cast<size_t>(i)];
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-4});
      worst = std::max(worst, std::abs(num - ana) / denom);
    }
  }
  return worst;
}

inline c3::Tensor<double> random_tensor(c3::Shape s, c3::Rng& rng, double lo = -1, double hi = 1) {
  c3::Tensor<double> t(std::move(s));
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace c3test
