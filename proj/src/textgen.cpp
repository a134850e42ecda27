// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#include "c3/textgen.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "c3/rng.hpp"

namespace fs = std::filesystem;

namespace c3 {

namespace {

const int kHersheyFaces[kNumFonts] = {cv::FONT_HERSHEY_SIMPLEX, cv::FONT_HERSHEY_DUPLEX,
                                      cv::FONT_HERSHEY_COMPLEX, cv::FONT_HERSHEY_TRIPLEX};

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string apply_case(const std::string& text, CaseStyle cs) {
  std::string t = text;
  switch (cs) {
    case CaseStyle::kLower:
      for (auto& c : t) c = static_cast<char>(std::tolower(c));
      break;
    case CaseStyle::kUpper:
      for (auto& c : t) c = static_cast<char>(std::toupper(c));
      break;
    case CaseStyle::kMixed:  // title case, deterministic
      for (auto& c : t) c = static_cast<char>(std::tolower(c));
      t[0] = static_cast<char>(std::toupper(t[0]));
      break;
  }
  return t;
}

/// Finds the largest Hershey font scale whose rendered text fits the canvas.
double fit_font_scale(const std::string& text, int face, int thickness, int width, int height,
                      int* baseline_out, cv::Size* size_out) {
  double scale = cv::getFontScaleFromHeight(face, static_cast<int>(height * 0.55), thickness);
  for (int iter = 0; iter < 64; ++iter) {
    int baseline = 0;
    cv::Size sz = cv::getTextSize(text, face, scale, thickness, &baseline);
    if (sz.width <= width - 4 && sz.height + baseline <= height - 2) {
      if (baseline_out) *baseline_out = baseline;
      if (size_out) *size_out = sz;
      return scale;
    }
    scale *= 0.92;
    if (scale < 0.18) break;
  }
  throw std::invalid_argument("text '" + text + "' does not fit a " + std::to_string(width) + "x" +
                              std::to_string(height) + " canvas at minimum font size");
}

Image mat_gray_to_image3(const cv::Mat& m, float bg, float ink) {
  Image img(3, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const float a = m.at<uint8_t>(y, x) / 255.f;  // ink coverage
      const float v = bg + (ink - bg) * a;
      img.at(0, y, x) = img.at(1, y, x) = img.at(2, y, x) = v;
    }
  return img;
}

// 8x8 bitmap glyph table loaded from a file (one line: <char> <8 hex bytes>)
struct BitmapFont {
  std::map<char, std::array<uint8_t, 8>> glyphs;
};

const BitmapFont& load_bitmap_font(const std::string& path) {
  static std::map<std::string, BitmapFont> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(path);
  if (it != cache.end()) return it->second;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open font file " + path);
  BitmapFont font;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string ch;
    ss >> ch;
    std::array<uint8_t, 8> rows{};
    for (auto& r : rows) {
      std::string hex;
      ss >> hex;
      r = static_cast<uint8_t>(std::stoul(hex, nullptr, 16));
    }
    font.glyphs[ch[0]] = rows;
  }
  return cache[path] = font;
}

bool builtin_face(const std::string& name, int* face, int* thickness) {
  if (name == "builtin:duplex-bold") {
    *face = cv::FONT_HERSHEY_DUPLEX;
    *thickness = 2;
  } else if (name == "builtin:simplex") {
    *face = cv::FONT_HERSHEY_SIMPLEX;
    *thickness = 1;
  } else if (name == "builtin:plain") {
    *face = cv::FONT_HERSHEY_PLAIN;
    *thickness = 1;
  } else if (name == "builtin:triplex-bold") {
    *face = cv::FONT_HERSHEY_TRIPLEX;
    *thickness = 2;
  } else {
    return false;
  }
  return true;
}

}  // namespace

Image render_text_image(const TextSample& sample, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("render_text_image: bad canvas size");
  if (sample.text.empty()) throw std::invalid_argument("render_text_image: empty text");
  if (sample.font_id < 0 || sample.font_id >= kNumFonts)
    throw std::invalid_argument("unknown font_id " + std::to_string(sample.font_id));

  const std::string shown = apply_case(sample.text, sample.case_style);
  const int face = kHersheyFaces[sample.font_id];
  const int thickness = sample.font_id >= 1 ? 2 : 1;

  int baseline = 0;
  cv::Size sz;
  const double scale = fit_font_scale(shown, face, thickness, width, height, &baseline, &sz);

  cv::Mat canvas = cv::Mat::zeros(height, width, CV_8UC1);
  const cv::Point org((width - sz.width) / 2, (height + sz.height) / 2);
  cv::putText(canvas, shown, org, face, scale, cv::Scalar(255), thickness, cv::LINE_AA);

  // deterministic per-sample contrast, keyed off the sample itself
  const uint64_t h = fnv1a(shown + "|" + std::to_string(sample.font_id));
  const float bg = 0.78f + 0.17f * static_cast<float>((h >> 8) & 0xff) / 255.f;
  const float ink = 0.05f + 0.25f * static_cast<float>((h >> 24) & 0xff) / 255.f;
  return mat_gray_to_image3(canvas, bg, ink);
}

Image render_skeleton_text(const std::string& text, int width, int height, const FontSpec& font,
                           bool uppercase) {
  Image img(3, height, width, 0.f);
  if (text.empty()) return img;
  std::string shown = text;
  for (auto& c : shown) c = static_cast<char>(uppercase ? std::toupper(c) : std::tolower(c));

  int face = 0, thickness = 1;
  if (builtin_face(font.name, &face, &thickness)) {
    cv::Mat canvas = cv::Mat::zeros(height, width, CV_8UC1);
    int baseline = 0;
    cv::Size sz;
    double scale;
    try {
      scale = fit_font_scale(shown, face, thickness, width, height, &baseline, &sz);
    } catch (const std::invalid_argument&) {
      // very long decodes: hairline thickness, squeezed
      thickness = 1;
      scale = 0.3;
      sz = cv::getTextSize(shown, face, scale, thickness, &baseline);
    }
    const cv::Point org(std::max(0, (width - sz.width) / 2), (height + sz.height) / 2);
    cv::putText(canvas, shown, org, face, scale, cv::Scalar(255), thickness, cv::LINE_AA);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const float v = canvas.at<uint8_t>(y, x) / 255.f;
        img.at(0, y, x) = img.at(1, y, x) = img.at(2, y, x) = v;
      }
    return img;
  }

  // bitmap glyph-table path
  const BitmapFont& bf = load_bitmap_font(font.name);
  const int n = static_cast<int>(shown.size());
  const int cell = std::max(1, std::min(height / 8, width / (8 * n)));
  const int x0 = std::max(0, (width - 8 * cell * n) / 2);
  const int y0 = std::max(0, (height - 8 * cell) / 2);
  for (int i = 0; i < n; ++i) {
    auto it = bf.glyphs.find(shown[static_cast<size_t>(i)]);
    if (it == bf.glyphs.end()) continue;
    for (int ry = 0; ry < 8; ++ry)
      for (int rx = 0; rx < 8; ++rx) {
        if (!((it->second[static_cast<size_t>(ry)] >> rx) & 1)) continue;
        for (int sy = 0; sy < cell; ++sy)
          for (int sx = 0; sx < cell; ++sx) {
            const int y = y0 + ry * cell + sy, x = x0 + (i * 8 + rx) * cell + sx;
            if (y < height && x < width) img.at(0, y, x) = img.at(1, y, x) = img.at(2, y, x) = 1.f;
          }
      }
  }
  return img;
}

Image degrade(const Image& hr, const DegradeParams& params) {
  if (hr.h % 2 != 0 || hr.w % 2 != 0)
    throw std::invalid_argument("degrade: spatial dims must be even");
  if (params.blur_sigma < 0 || params.noise_sigma < 0)
    throw std::invalid_argument("degrade: negative sigma");

  Image blurred = gaussian_blur(hr, params.blur_sigma);

  const int h2 = hr.h / 2, w2 = hr.w / 2;
  Image lr(hr.c, h2, w2);
  if (params.downsample == Downsample::kAreaAverage) {
    for (int ci = 0; ci < hr.c; ++ci)
      for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x)
          lr.at(ci, y, x) =
              0.25f * (blurred.at(ci, 2 * y, 2 * x) + blurred.at(ci, 2 * y, 2 * x + 1) +
                       blurred.at(ci, 2 * y + 1, 2 * x) + blurred.at(ci, 2 * y + 1, 2 * x + 1));
  } else {
    // align-corners bilinear at the coarse grid
    const double ry = h2 > 1 ? static_cast<double>(hr.h - 1) / (h2 - 1) : 0;
    const double rx = w2 > 1 ? static_cast<double>(hr.w - 1) / (w2 - 1) : 0;
    for (int ci = 0; ci < hr.c; ++ci)
      for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) {
          const double py = y * ry, px = x * rx;
          const int y0 = std::min(static_cast<int>(py), hr.h - 2);
          const int x0 = std::min(static_cast<int>(px), hr.w - 2);
          const double fy = py - y0, fx = px - x0;
          lr.at(ci, y, x) = static_cast<float>(
              (1 - fy) * ((1 - fx) * blurred.at(ci, y0, x0) + fx * blurred.at(ci, y0, x0 + 1)) +
              fy * ((1 - fx) * blurred.at(ci, y0 + 1, x0) + fx * blurred.at(ci, y0 + 1, x0 + 1)));
        }
  }

  if (params.noise_sigma > 0) {
    Rng rng(params.seed);
    for (auto& v : lr.v) v += static_cast<float>(rng.normal(0.0, params.noise_sigma));
  }
  for (auto& v : lr.v) v = std::min(1.f, std::max(0.f, v));
  return lr;
}

std::string mutate_spelling(const std::string& text, double rate, uint64_t rng_seed,
                            const Alphabet& alphabet) {
  if (rate < 0 || rate > 1) throw std::invalid_argument("mutate_spelling: rate outside [0,1]");
  if (!alphabet.valid_text(text))
    throw std::invalid_argument("mutate_spelling: text has characters outside the alphabet");
  Rng rng(rng_seed);
  std::string out = text;
  for (auto& c : out) {
    if (rng.uniform() >= rate) continue;
    const int cur = alphabet.id_of(c);
    int sub = static_cast<int>(rng.below(alphabet.num_chars() - 1));
    if (sub >= cur) ++sub;
    c = alphabet.char_at(sub);
  }
  return out;
}

std::vector<std::string> load_corpus(const std::string& path, int max_len) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open corpus " + path);
  Alphabet alphabet;
  std::vector<std::string> words;
  std::string line;
  while (std::getline(f, line)) {
    std::string w;
    for (char c : line) {
      const char lc = static_cast<char>(std::tolower(c));
      if (alphabet.contains(lc)) w += lc;
    }
    if (!w.empty() && static_cast<int>(w.size()) <= max_len) words.push_back(w);
  }
  return words;
}

LrHrPair make_pair_sample(const TextSample& sample, const std::string& tier,
                          const DegradeParams& params) {
  LrHrPair p;
  p.hr = render_text_image(sample, kHrWidth, kHrHeight);
  p.lr = degrade(p.hr, params);
  p.label = sample.text;
  p.tier = tier;
  return p;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest " + path);
  f << "id\tlabel\ttier\tlr_path\thr_path\n";
  for (const auto& r : records)
    f << r.id << '\t' << r.label << '\t' << r.tier << '\t' << r.lr_path << '\t' << r.hr_path << '\n';
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    DatasetRecord r;
    std::getline(ss, r.id, '\t');
    std::getline(ss, r.label, '\t');
    std::getline(ss, r.tier, '\t');
    std::getline(ss, r.lr_path, '\t');
    std::getline(ss, r.hr_path, '\t');
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest build_dataset(const std::vector<TextSample>& samples,
                              const std::map<std::string, DegradeParams>& tiers,
                              const std::string& out_dir) {
  if (samples.empty()) throw std::invalid_argument("build_dataset: no samples");
  if (tiers.empty()) throw std::invalid_argument("build_dataset: empty tier map");

  fs::create_directories(fs::path(out_dir) / "lr");
  fs::create_directories(fs::path(out_dir) / "hr");

  std::vector<std::string> tier_names;
  for (const auto& [name, p] : tiers) tier_names.push_back(name);

  DatasetManifest manifest;
  manifest.root = out_dir;
  for (size_t i = 0; i < samples.size(); ++i) {
    const std::string& tier = tier_names[i % tier_names.size()];
    DegradeParams params = tiers.at(tier);
    params.seed = Rng::derive(params.seed, i);
    char id[16];
    std::snprintf(id, sizeof id, "s%06zu", i);
    LrHrPair pair = make_pair_sample(samples[i], tier, params);

    DatasetRecord r;
    r.id = id;
    r.label = pair.label;
    r.tier = tier;
    r.lr_path = std::string("lr/") + id + ".png";
    r.hr_path = std::string("hr/") + id + ".png";
    write_png((fs::path(out_dir) / r.lr_path).string(), pair.lr);
    write_png((fs::path(out_dir) / r.hr_path).string(), pair.hr);
    manifest.records.push_back(std::move(r));
  }
  manifest.save((fs::path(out_dir) / "manifest.tsv").string());
  return manifest;
}

std::vector<TextSample> sample_texts(const std::vector<std::string>& corpus, int count,
                                     uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("sample_texts: empty corpus");
  Rng rng(seed);
  std::vector<TextSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    TextSample s;
    s.text = corpus[static_cast<size_t>(rng.below(static_cast<int64_t>(corpus.size())))];
    s.font_id = static_cast<int>(rng.below(kNumFonts));
    const double u = rng.uniform();
    s.case_style = u < 0.5 ? CaseStyle::kLower : (u < 0.75 ? CaseStyle::kUpper : CaseStyle::kMixed);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace c3
