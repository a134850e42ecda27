// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#include "c3/metrics.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace c3 {

double psnr(const Image& a, const Image& b) {
  if (a.c != b.c || a.h != b.h || a.w != b.w) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = static_cast<double>(a.v[i]) - b.v[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.v.size());
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;

const std::vector<double>& gauss_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(kWin);
    const double sigma = 1.5;
    double s = 0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - (kWin - 1) / 2.0;
      v[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (sigma * sigma));
      s += v[static_cast<size_t>(i)];
    }
    for (auto& x : v) x /= s;
    return v;
  }();
  return k;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  if (h < kWin || w < kWin) throw std::invalid_argument("ssim: image smaller than window");
  const auto& k = gauss_kernel();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  // valid region only: window fully inside the image
  for (int y = 0; y + kWin <= h; ++y)
    for (int x = 0; x + kWin <= w; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          const double wgt = k[static_cast<size_t>(dy)] * k[static_cast<size_t>(dx)];
          const double va = a[static_cast<size_t>((y + dy) * w + x + dx)];
          const double vb = b[static_cast<size_t>((y + dy) * w + x + dx)];
          mu_a += wgt * va;
          mu_b += wgt * vb;
          aa += wgt * va * va;
          bb += wgt * vb * vb;
          ab += wgt * va * vb;
        }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  return total / count;
}

std::vector<double> plane_of(const Image& img, int ci) {
  std::vector<double> p(static_cast<size_t>(img.h) * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) p[static_cast<size_t>(y * img.w + x)] = img.at(ci, y, x);
  return p;
}

}  // namespace

double ssim(const Image& a, const Image& b, SsimChannels mode) {
  if (a.c != b.c || a.h != b.h || a.w != b.w) throw std::invalid_argument("ssim: shape mismatch");
  if (mode == SsimChannels::kGrayscale) {
    const Image ga = to_grayscale(a), gb = to_grayscale(b);
    return ssim_plane(plane_of(ga, 0), plane_of(gb, 0), a.h, a.w);
  }
  double total = 0;
  for (int ci = 0; ci < a.c; ++ci) total += ssim_plane(plane_of(a, ci), plane_of(b, ci), a.h, a.w);
  return total / a.c;
}

std::string normalize_label(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

double recognition_accuracy(const std::vector<std::string>& preds,
                            const std::vector<std::string>& gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("recognition_accuracy: length mismatch");
  if (preds.empty()) throw std::invalid_argument("recognition_accuracy: empty lists");
  int hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (normalize_label(preds[i]) == normalize_label(gts[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

void EvalReport::write_tsv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "tier\tcount\tpsnr\tssim\tavg_acc\n";
  for (const auto& [name, t] : tiers)
    f << name << '\t' << t.count << '\t' << t.psnr << '\t' << t.ssim << '\t' << t.accuracy << '\n';
  f << "average\t" << sample_count << '\t' << psnr << '\t' << ssim << '\t' << accuracy << '\n';
}

void EvalReport::write_json(const std::string& path) const {
  nlohmann::json j;
  j["psnr"] = psnr;
  j["ssim"] = ssim;
  j["accuracy"] = accuracy;
  j["lr_accuracy"] = lr_accuracy;
  j["hr_accuracy"] = hr_accuracy;
  j["sample_count"] = sample_count;
  for (const auto& [name, t] : tiers)
    j["tiers"][name] = {{"psnr", t.psnr}, {"ssim", t.ssim}, {"accuracy", t.accuracy}, {"count", t.count}};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

}  // namespace c3
