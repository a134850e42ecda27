// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "c3/image.hpp"

namespace c3 {

/// 10*log10(peak^2/MSE) with peak 1.0; identical images capped at 100 dB.
double psnr(const Image& a, const Image& b);

enum class SsimChannels { kGrayscale, kPerChannelMean };

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), stabilizers
/// C1=(0.01)^2, C2=(0.03)^2 on unit dynamic range.
double ssim(const Image& a, const Image& b, SsimChannels mode = SsimChannels::kGrayscale);

/// Strips all non-alphanumeric characters and lowercases.
std::string normalize_label(const std::string& s);

/// Fraction of exact matches after normalize_label on both sides.
double recognition_accuracy(const std::vector<std::string>& preds,
                            const std::vector<std::string>& gts);

struct TierMetrics {
  double psnr = 0, ssim = 0, accuracy = 0;
  int count = 0;
};

struct EvalReport {
  double psnr = 0, ssim = 0, accuracy = 0;
  double lr_accuracy = 0, hr_accuracy = 0;  // recognizer on raw LR / clean HR
  int sample_count = 0;
  std::map<std::string, TierMetrics> tiers;

  void write_tsv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

}  // namespace c3
