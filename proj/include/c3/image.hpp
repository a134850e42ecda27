// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "c3/tensor.hpp"

namespace c3 {

/// CHW float image, values in [0,1]. The currency of the whole pipeline.
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Image() = default;
  Image(int c_, int h_, int w_, float fill = 0.f)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  float& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  float at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  int64_t numel() const { return static_cast<int64_t>(v.size()); }

  Tensor<float> tensor() const { return Tensor<float>({1, c, h, w}, v); }
};

Image from_tensor_slice(const Tensor<float>& t, int batch_index);

/// Stacks images of identical geometry into an NCHW tensor.
Tensor<float> batch_tensor(const std::vector<Image>& imgs);

/// 8-bit PNG round trip.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

/// Classic resampling on plain images (no autodiff).
Image resize_bilinear(const Image& img, int h2, int w2);
Image resize_bicubic(const Image& img, int h2, int w2);
Image resize_area(const Image& img, int h2, int w2);
Image gaussian_blur(const Image& img, double sigma);
Image to_grayscale(const Image& img);

}  // namespace c3
