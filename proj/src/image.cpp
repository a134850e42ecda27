// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#include "c3/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <stdexcept>

namespace c3 {

namespace {

cv::Mat to_mat8(const Image& img) {
  CV_Assert(img.c == 1 || img.c == 3);
  cv::Mat m(img.h, img.w, img.c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto q = [&](int ci) {
        const float v = std::min(1.f, std::max(0.f, img.at(ci, y, x)));
        return static_cast<uint8_t>(std::lround(v * 255.f));
      };
      if (img.c == 3)
        m.at<cv::Vec3b>(y, x) = {q(2), q(1), q(0)};  // RGB -> BGR
      else
        m.at<uint8_t>(y, x) = q(0);
    }
  return m;
}

Image from_mat8(const cv::Mat& m) {
  Image img(m.channels() == 3 ? 3 : 1, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      if (m.channels() == 3) {
        const cv::Vec3b px = m.at<cv::Vec3b>(y, x);
        img.at(0, y, x) = px[2] / 255.f;
        img.at(1, y, x) = px[1] / 255.f;
        img.at(2, y, x) = px[0] / 255.f;
      } else {
        img.at(0, y, x) = m.at<uint8_t>(y, x) / 255.f;
      }
    }
  return img;
}

Image resize_with(const Image& img, int h2, int w2, int interp) {
  cv::Mat m(img.h, img.w, CV_32FC(img.c));
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ci = 0; ci < img.c; ++ci)
        m.ptr<float>(y)[x * img.c + ci] = img.at(ci, y, x);
  cv::Mat r;
  cv::resize(m, r, {w2, h2}, 0, 0, interp);
  Image out(img.c, h2, w2);
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x)
      for (int ci = 0; ci < img.c; ++ci)
        out.at(ci, y, x) = std::min(1.f, std::max(0.f, r.ptr<float>(y)[x * img.c + ci]));
  return out;
}

}  // namespace

Image from_tensor_slice(const Tensor<float>& t, int batch_index) {
  Image img(t.dim(1), t.dim(2), t.dim(3));
  const int64_t n = static_cast<int64_t>(img.c) * img.h * img.w;
  std::copy_n(t.data() + batch_index * n, n, img.v.data());
  return img;
}

Tensor<float> batch_tensor(const std::vector<Image>& imgs) {
  const Image& f = imgs.front();
  Tensor<float> t({static_cast<int>(imgs.size()), f.c, f.h, f.w});
  const int64_t n = f.numel();
  for (size_t i = 0; i < imgs.size(); ++i) std::copy_n(imgs[i].v.data(), n, t.data() + i * n);
  return t;
}

void write_png(const std::string& path, const Image& img) {
  if (!cv::imwrite(path, to_mat8(img), {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw std::runtime_error("failed to write " + path);
}

Image read_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("failed to read " + path);
  return from_mat8(m);
}

Image resize_bilinear(const Image& img, int h2, int w2) {
  return resize_with(img, h2, w2, cv::INTER_LINEAR);
}

Image resize_bicubic(const Image& img, int h2, int w2) {
  return resize_with(img, h2, w2, cv::INTER_CUBIC);
}

Image resize_area(const Image& img, int h2, int w2) {
  return resize_with(img, h2, w2, cv::INTER_AREA);
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& x : k) x /= sum;

  // separable, clamped borders (constants stay constant)
  Image tmp(img.c, img.h, img.w), out(img.c, img.h, img.w);
  for (int ci = 0; ci < img.c; ++ci)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::min(img.w - 1, std::max(0, x + i));
          acc += k[static_cast<size_t>(i + radius)] * img.at(ci, y, xx);
        }
        tmp.at(ci, y, x) = static_cast<float>(acc);
      }
  for (int ci = 0; ci < img.c; ++ci)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::min(img.h - 1, std::max(0, y + i));
          acc += k[static_cast<size_t>(i + radius)] * tmp.at(ci, yy, x);
        }
        out.at(ci, y, x) = static_cast<float>(acc);
      }
  return out;
}

Image to_grayscale(const Image& img) {
  if (img.c == 1) return img;
  Image g(1, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      g.at(0, y, x) = 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
  return g;
}

}  // namespace c3
