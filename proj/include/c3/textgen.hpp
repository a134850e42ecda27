// Copyright 2026 the c3-stisr authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "c3/alphabet.hpp"
#include "c3/image.hpp"

namespace c3 {

enum class CaseStyle { kUpper, kLower, kMixed };

struct TextSample {
  std::string text;  // over Alphabet characters, lowercased for labels
  int font_id = 0;
  CaseStyle case_style = CaseStyle::kLower;
};

enum class Downsample { kAreaAverage, kBilinear };

struct DegradeParams {
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  Downsample downsample = Downsample::kAreaAverage;
  uint64_t seed = 0;
};

struct DatasetRecord {
  std::string id;
  std::string label;
  std::string tier;
  std::string lr_path;
  std::string hr_path;
};

struct DatasetManifest {
  std::string root;
  std::vector<DatasetRecord> records;

  size_t size() const { return records.size(); }
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

/// Font used by the renderer and the skeleton painter. Named builtin faces
/// ("builtin:duplex-bold", "builtin:simplex", ...) map to vector fonts; any
/// other string is read as a bitmap glyph-table file (one line per glyph:
/// `<char> <8 hex bytes>`).
struct FontSpec {
  std::string name = "builtin:duplex-bold";
  static FontSpec from_config(const std::string& value) { return FontSpec{value}; }
};

inline constexpr int kLrHeight = 16, kLrWidth = 64;
inline constexpr int kHrHeight = 32, kHrWidth = 128;
inline constexpr int kNumFonts = 4;

/// Deterministic horizontal text rasterizer. Dark ink on light background.
Image render_text_image(const TextSample& sample, int width, int height);

/// White-on-black fixed-font render at the given geometry (skeleton style).
Image render_skeleton_text(const std::string& text, int width, int height, const FontSpec& font,
                           bool uppercase);

/// Blur -> 2x downsample -> additive noise -> clamp. Output dims are halved.
Image degrade(const Image& hr, const DegradeParams& params);

/// Substitution-only spelling corruption; output length equals input length.
std::string mutate_spelling(const std::string& text, double rate, uint64_t rng_seed,
                            const Alphabet& alphabet);

/// One lowercase word per line; characters outside the alphabet are dropped,
/// empty/overlong words skipped.
std::vector<std::string> load_corpus(const std::string& path, int max_len = 8);

struct LrHrPair {
  Image lr, hr;
  std::string label;
  std::string tier;
};

LrHrPair make_pair_sample(const TextSample& sample, const std::string& tier,
                          const DegradeParams& params);

/// Renders every sample, degrades per round-robin tier, writes PNGs and
/// manifest.tsv under out_dir.
DatasetManifest build_dataset(const std::vector<TextSample>& samples,
                              const std::map<std::string, DegradeParams>& tiers,
                              const std::string& out_dir);

/// Draws `count` samples (word, font, case) from the corpus.
std::vector<TextSample> sample_texts(const std::vector<std::string>& corpus, int count,
                                     uint64_t seed);

}  // namespace c3
