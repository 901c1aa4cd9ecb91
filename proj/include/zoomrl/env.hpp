#pragma once

// Synthetic micro-VQA task. A small glyph sits somewhere in a noisy canvas.
// In the area-averaged observation its position is visible (the glyph box is
// darker than the background) but its identity is not: every glyph is a 3x3
// arrangement of 2x2 diagonal cells, and a diagonal and an anti-diagonal cell
// average to the same value. A crop at canvas resolution shows the diagonals.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "zoomrl/errors.hpp"
#include "zoomrl/raster.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/zoomtool.hpp"

namespace zoomrl {

inline constexpr int kGlyphCells = 3;     // cells per side
inline constexpr int kGlyphBitmap = 6;    // bitmap side in pixels
inline constexpr int kMaxAlphabet = 8;
inline constexpr double kBackgroundLevel = 0.5;
inline constexpr double kGlyphOffLevel = 0.1;
inline constexpr double kGlyphOnLevel = 0.4;
inline constexpr std::string_view kQuestion = "What symbol is hidden in the image?";
inline constexpr std::string_view kUnknownAnswer = "unknown";

// One bit per cell, row-major from the top-left cell (bit 8). Each bit is set
// in exactly four codes and any two codes differ in at least four cells, i.e.
// at least 16 of the 36 bitmap pixels.
inline constexpr std::array<std::uint16_t, kMaxAlphabet> kGlyphCodes{
    0b001011010, 0b001110101, 0b010111000, 0b011000100,
    0b100001001, 0b100100110, 0b110010011, 0b111101111};

using GlyphBitmap = std::array<std::array<bool, kGlyphBitmap>, kGlyphBitmap>;

inline GlyphBitmap glyph_bitmap(int symbol) {
  GlyphBitmap bm{};
  const auto code = kGlyphCodes.at(static_cast<std::size_t>(symbol));
  for (int cy = 0; cy < kGlyphCells; ++cy) {
    for (int cx = 0; cx < kGlyphCells; ++cx) {
      const bool anti = (code >> (8 - (cy * kGlyphCells + cx))) & 1u;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          bm[static_cast<std::size_t>(2 * cy + dy)][static_cast<std::size_t>(2 * cx + dx)] =
              anti ? (dx != dy) : (dx == dy);
    }
  }
  return bm;
}

inline std::string symbol_name(int symbol) { return std::string(1, static_cast<char>('A' + symbol)); }

inline int symbol_index(std::string_view name) {
  if (name.size() != 1 || name[0] < 'A' || name[0] >= 'A' + kMaxAlphabet)
    throw ConfigError("unknown glyph symbol '" + std::string(name) + "'");
  return name[0] - 'A';
}

enum class Difficulty { SolvableWithoutZoom, RequiresZoom };

inline std::string_view difficulty_name(Difficulty d) {
  return d == Difficulty::RequiresZoom ? "RequiresZoom" : "SolvableWithoutZoom";
}

struct EnvConfig {
  int canvas_size = 64;
  int obs_size = 16;
  int glyph_size = 6;
  int alphabet_size = 8;
  double noise_std = 0.1;
  double easy_fraction = 0.2;  // share of SolvableWithoutZoom samples
  std::uint64_t rng_seed = 0;

  int perception_factor() const { return canvas_size / obs_size; }
  int glyph_side(Difficulty d) const { return d == Difficulty::RequiresZoom ? glyph_size : 3 * glyph_size; }

  void validate(int crop_size = 16) const {
    if (canvas_size < 1 || obs_size < 1 || canvas_size % obs_size != 0)
      throw ConfigError("env: obs_size must divide canvas_size");
    if (glyph_size < kGlyphBitmap || glyph_size % kGlyphBitmap != 0)
      throw ConfigError("env: glyph_size must be a positive multiple of 6");
    if (!(glyph_size < crop_size && crop_size <= canvas_size))
      throw ConfigError("env: need glyph_size < crop_size <= canvas_size");
    if (3 * glyph_size > canvas_size) throw ConfigError("env: enlarged glyph does not fit the canvas");
    if (alphabet_size < 2 || alphabet_size > kMaxAlphabet) throw ConfigError("env: alphabet_size must be in [2,8]");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("env: noise_std must be >= 0");
    if (!(easy_fraction >= 0.0 && easy_fraction <= 1.0)) throw ConfigError("env: easy_fraction must be in [0,1]");
  }
};

struct SyntheticSample {
  int sample_id = 0;
  Raster canvas;
  int glyph_symbol = 0;
  Keypoint glyph_center;
  std::string question{kQuestion};
  AnswerKey answer_key;
  Difficulty difficulty = Difficulty::RequiresZoom;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Writes the noiseless glyph with top-left corner `tl` at integer scale.
inline void draw_glyph(Raster& canvas, int symbol, Keypoint tl, int side) {
  const auto bm = glyph_bitmap(symbol);
  const int scale = side / kGlyphBitmap;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      canvas.at(tl.x + x, tl.y + y) =
          bm[static_cast<std::size_t>(y / scale)][static_cast<std::size_t>(x / scale)] ? kGlyphOnLevel
                                                                                      : kGlyphOffLevel;
}

inline Keypoint glyph_top_left(Keypoint center, int side) { return {center.x - side / 2, center.y - side / 2}; }

inline Raster render_clean(const EnvConfig& cfg, int symbol, Keypoint center, Difficulty d) {
  Raster canvas(cfg.canvas_size, cfg.canvas_size, kBackgroundLevel);
  const int side = cfg.glyph_side(d);
  draw_glyph(canvas, symbol, glyph_top_left(center, side), side);
  return canvas;
}

inline SyntheticSample generate_one(const EnvConfig& cfg, int sample_id) {
  std::mt19937_64 rng(mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(sample_id)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticSample s;
  s.sample_id = sample_id;
  s.difficulty = unit(rng) < cfg.easy_fraction ? Difficulty::SolvableWithoutZoom : Difficulty::RequiresZoom;
  s.glyph_symbol = std::uniform_int_distribution<int>(0, cfg.alphabet_size - 1)(rng);
  const int side = cfg.glyph_side(s.difficulty);
  std::uniform_int_distribution<int> pos(0, cfg.canvas_size - side);
  const int tlx = pos(rng);
  const int tly = pos(rng);
  s.glyph_center = {tlx + side / 2, tly + side / 2};
  s.canvas = render_clean(cfg, s.glyph_symbol, s.glyph_center, s.difficulty);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  for (auto& v : s.canvas.pixels()) {
    const double noisy = cfg.noise_std > 0.0 ? v + noise(rng) : v;
    v = quantize_255(noisy) / 255.0;  // stored as 8-bit intensities
  }
  s.answer_key = AnswerKey::of({symbol_name(s.glyph_symbol)});
  return s;
}

inline std::vector<SyntheticSample> generate(const EnvConfig& cfg, int n, int first_id = 0) {
  cfg.validate();
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_one(cfg, first_id + i));
  return out;
}

inline Raster observe(const SyntheticSample& s, const EnvConfig& cfg) {
  return downsize_long_side(s.canvas, cfg.obs_size);
}

/// What the policy "sees" of an image: area-averaged at the fixed
/// canvas-to-observation ratio, then placed on the observation grid. A crop
/// that was resized to the canvas size keeps all of its detail; a crop left
/// at native size loses it.
inline Raster perceive(const Raster& img, const EnvConfig& cfg) {
  const Size grid{cfg.obs_size, cfg.obs_size};
  const int f = cfg.perception_factor();
  const Size seen{std::max(1, img.width() / f), std::max(1, img.height() / f)};
  return resize_nearest(resize_area(img, seen), grid);
}

/// Observation at a reduced resolution `obs_size`, shown on the policy's
/// native grid.
inline Raster perceive_at_resolution(const Raster& canvas, int obs_size, const EnvConfig& cfg) {
  return resize_nearest(downsize_long_side(canvas, obs_size), {cfg.obs_size, cfg.obs_size});
}

/// Fixates a perceived crop: shifts it so the darkest `window`-sized box sits
/// in the middle, padding with background. Reading then sees the glyph at a
/// stable position whichever bin the keypoint came from.
inline Raster fixate(const Raster& img, int window, double background = 0.5) {
  const int w = img.width(), h = img.height();
  if (window < 1 || window > w || window > h) return img;
  // summed-area table for O(1) box sums
  std::vector<double> sat(static_cast<std::size_t>((w + 1) * (h + 1)), 0.0);
  auto S = [&](int x, int y) -> double& { return sat[static_cast<std::size_t>(y * (w + 1) + x)]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) S(x + 1, y + 1) = img.at(x, y) + S(x, y + 1) + S(x + 1, y) - S(x, y);
  double best = std::numeric_limits<double>::infinity();
  int bx = 0, by = 0;
  for (int y = 0; y + window <= h; ++y)
    for (int x = 0; x + window <= w; ++x) {
      const double a = S(x + window, y + window) - S(x, y + window) - S(x + window, y) + S(x, y);
      if (a < best) {
        best = a;
        bx = x;
        by = y;
      }
    }
  const int dx = (w - window) / 2 - bx, dy = (h - window) / 2 - by;
  Raster out(w, h, std::vector<double>(static_cast<std::size_t>(w * h), background));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = x - dx, sy = y - dy;
      if (sx >= 0 && sy >= 0 && sx < w && sy < h) out.at(x, y) = img.at(sx, sy);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration oracles.

enum class OracleDecoder { GlobalOnly, ZoomAtTruth };

namespace detail {

inline double sse(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

// Maximum-likelihood (symbol, position) fit of the observation under the
// noiseless scene model, with the glyph size known from the difficulty.
inline int decode_global(const Raster& obs, const EnvConfig& cfg, Difficulty d) {
  const int f = cfg.perception_factor();
  const int side = cfg.glyph_side(d);
  const int cell = side / kGlyphBitmap;
  const double block_area = static_cast<double>(f * f);
  double base = 0.0;
  for (double v : obs.pixels()) base += (v - kBackgroundLevel) * (v - kBackgroundLevel);

  std::vector<GlyphBitmap> bitmaps;
  for (int k = 0; k < cfg.alphabet_size; ++k) bitmaps.push_back(glyph_bitmap(k));

  const int nb = (side + f - 1) / f + 1;  // blocks touched per axis
  std::vector<double> acc(static_cast<std::size_t>(nb * nb));
  double best = std::numeric_limits<double>::infinity();
  int best_symbol = 0;
  for (int ty = 0; ty + side <= cfg.canvas_size; ++ty) {
    for (int tx = 0; tx + side <= cfg.canvas_size; ++tx) {
      const int bx0 = tx / f;
      const int by0 = ty / f;
      for (int k = 0; k < cfg.alphabet_size; ++k) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const auto& bm = bitmaps[static_cast<std::size_t>(k)];
        for (int y = 0; y < side; ++y) {
          const int by = (ty + y) / f - by0;
          for (int x = 0; x < side; ++x) {
            const int bx = (tx + x) / f - bx0;
            const double lvl = bm[static_cast<std::size_t>(y / cell)][static_cast<std::size_t>(x / cell)]
                                   ? kGlyphOnLevel
                                   : kGlyphOffLevel;
            acc[static_cast<std::size_t>(by * nb + bx)] += lvl - kBackgroundLevel;
          }
        }
        double err = base;
        for (int by = 0; by < nb; ++by) {
          for (int bx = 0; bx < nb; ++bx) {
            const int ox = bx0 + bx;
            const int oy = by0 + by;
            if (ox >= obs.width() || oy >= obs.height()) continue;
            const double delta = acc[static_cast<std::size_t>(by * nb + bx)] / block_area;
            if (delta == 0.0) continue;
            const double r = obs.at(ox, oy) - kBackgroundLevel;
            err += (r - delta) * (r - delta) - r * r;
          }
        }
        if (err < best) {
          best = err;
          best_symbol = k;
        }
      }
    }
  }
  return best_symbol;
}

}  // namespace detail

/// Template match of a perceived crop against every symbol placed at the
/// known glyph position, rendered through the same crop pipeline.
inline int decode_crop(const Raster& perceived_crop, const SyntheticSample& s, Keypoint kp,
                       const EnvConfig& cfg, const ZoomConfig& zcfg) {
  double best = std::numeric_limits<double>::infinity();
  int best_symbol = 0;
  ZoomConfig z = zcfg;
  z.output_size = Size{cfg.canvas_size, cfg.canvas_size};
  for (int k = 0; k < cfg.alphabet_size; ++k) {
    const Raster tmpl = perceive(zoom(render_clean(cfg, k, s.glyph_center, s.difficulty), kp, z), cfg);
    const double e = detail::sse(perceived_crop.pixels(), tmpl.pixels());
    if (e < best) {
      best = e;
      best_symbol = k;
    }
  }
  return best_symbol;
}

inline double oracle_answer_rate(const std::vector<SyntheticSample>& samples, OracleDecoder decoder,
                                 const EnvConfig& cfg, const ZoomConfig& zcfg = {}) {
  if (samples.empty()) return 0.0;
  int correct = 0;
  ZoomConfig z = zcfg;
  z.output_size = Size{cfg.canvas_size, cfg.canvas_size};
  for (const auto& s : samples) {
    int guess = 0;
    if (decoder == OracleDecoder::GlobalOnly) {
      guess = detail::decode_global(observe(s, cfg), cfg, s.difficulty);
    } else {
      const Raster crop = perceive(zoom(s.canvas, s.glyph_center, z), cfg);
      guess = decode_crop(crop, s, s.glyph_center, cfg, zcfg);
    }
    if (guess == s.glyph_symbol) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Largest per-pixel difference between any two symbols' noiseless renderings
/// in a view. Measures how much identity information the view carries.
template <typename View>
double discriminative_contrast(const EnvConfig& cfg, Keypoint center, Difficulty d, View&& view) {
  std::vector<Raster> views;
  for (int k = 0; k < cfg.alphabet_size; ++k) views.push_back(view(render_clean(cfg, k, center, d)));
  double m = 0.0;
  for (std::size_t a = 0; a < views.size(); ++a)
    for (std::size_t b = a + 1; b < views.size(); ++b)
      for (std::size_t i = 0; i < views[a].pixels().size(); ++i)
        m = std::max(m, std::abs(views[a].pixels()[i] - views[b].pixels()[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Dataset JSON Lines.

inline nlohmann::json sample_to_json(const SyntheticSample& s) {
  std::vector<int> q;
  q.reserve(s.canvas.pixels().size());
  for (double v : s.canvas.pixels()) q.push_back(quantize_255(v));
  return {{"sample_id", s.sample_id},
          {"width", s.canvas.width()},
          {"height", s.canvas.height()},
          {"canvas", q},
          {"glyph_symbol", symbol_name(s.glyph_symbol)},
          {"glyph_center", {s.glyph_center.x, s.glyph_center.y}},
          {"question", s.question},
          {"difficulty", difficulty_name(s.difficulty)}};
}

inline SyntheticSample sample_from_json(const nlohmann::json& j) {
  SyntheticSample s;
  s.sample_id = j.at("sample_id").get<int>();
  const int w = j.at("width").get<int>();
  const int h = j.at("height").get<int>();
  std::vector<double> px;
  for (int q : j.at("canvas").get<std::vector<int>>()) {
    if (q < 0 || q > 255) throw ConfigError("dataset: canvas intensity out of range");
    px.push_back(q / 255.0);
  }
  s.canvas = Raster(w, h, std::move(px));
  s.glyph_symbol = symbol_index(j.at("glyph_symbol").get<std::string>());
  const auto c = j.at("glyph_center");
  s.glyph_center = {c.at(0).get<int>(), c.at(1).get<int>()};
  s.question = j.at("question").get<std::string>();
  const auto d = j.at("difficulty").get<std::string>();
  if (d == "RequiresZoom") s.difficulty = Difficulty::RequiresZoom;
  else if (d == "SolvableWithoutZoom") s.difficulty = Difficulty::SolvableWithoutZoom;
  else throw ConfigError("dataset: unknown difficulty '" + d + "'");
  s.answer_key = AnswerKey::of({symbol_name(s.glyph_symbol)});
  return s;
}

inline void write_dataset(std::ostream& os, const std::vector<SyntheticSample>& samples) {
  for (const auto& s : samples) os << sample_to_json(s).dump() << '\n';
}

inline std::vector<SyntheticSample> read_dataset(std::istream& is) {
  std::vector<SyntheticSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace zoomrl
