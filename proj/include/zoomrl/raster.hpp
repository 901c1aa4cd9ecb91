#pragma once

// Single-channel rasters with intensities in [0,1], area-average
// downsizing, nearest-neighbour resizing and ASCII PGM I/O.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zoomrl/errors.hpp"

namespace zoomrl {

struct Size {
  int width = 0;
  int height = 0;
  friend bool operator==(const Size&, const Size&) = default;
};

class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(checked(width) * checked(height)), fill) {}
  Raster(int width, int height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(checked(width) * checked(height)))
      throw std::invalid_argument("raster data length != width*height");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  Size size() const { return {width_, height_}; }
  int long_side() const { return std::max(width_, height_); }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y) { return data_[index(x, y)]; }
  double at(int x, int y) const { return data_[index(x, y)]; }

  std::span<const double> pixels() const { return data_; }
  std::span<double> pixels() { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  static long checked(int v) {
    if (v < 0) throw std::invalid_argument("negative raster dimension");
    return v;
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

namespace detail {

struct AreaTap {
  int src;
  double weight;  // overlap length in source pixels
};

// For each output cell along one axis, the source cells it overlaps and by how much.
inline std::vector<std::vector<AreaTap>> area_taps(int src_len, int dst_len) {
  std::vector<std::vector<AreaTap>> taps(static_cast<std::size_t>(dst_len));
  const double step = static_cast<double>(src_len) / dst_len;
  for (int o = 0; o < dst_len; ++o) {
    const double lo = o * step;
    const double hi = (o + 1) * step;
    for (int s = static_cast<int>(std::floor(lo)); s < src_len && s < hi; ++s) {
      const double w = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
      if (w > 1e-12) taps[static_cast<std::size_t>(o)].push_back({s, w});
    }
  }
  return taps;
}

}  // namespace detail

/// Area-average resample to an explicit size. Each output pixel is the mean
/// of the source area it covers.
inline Raster resize_area(const Raster& img, Size out) {
  if (out.width < 1 || out.height < 1) throw std::invalid_argument("resize_area: empty target");
  if (out == img.size()) return img;
  const auto tx = detail::area_taps(img.width(), out.width);
  const auto ty = detail::area_taps(img.height(), out.height);
  const double norm = (static_cast<double>(img.width()) / out.width) *
                      (static_cast<double>(img.height()) / out.height);
  Raster res(out.width, out.height);
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      double acc = 0.0;
      for (const auto& y : ty[static_cast<std::size_t>(oy)])
        for (const auto& x : tx[static_cast<std::size_t>(ox)]) acc += x.weight * y.weight * img.at(x.src, y.src);
      res.at(ox, oy) = std::clamp(acc / norm, 0.0, 1.0);
    }
  }
  return res;
}

/// Shrinks `img` so that its long side is at most `max_long`, keeping the
/// aspect ratio. Images that already fit are returned unchanged.
inline Raster downsize_long_side(const Raster& img, int max_long) {
  if (max_long < 1) throw std::invalid_argument("downsize_long_side: max_long must be >= 1");
  const int long_side = img.long_side();
  if (long_side <= max_long) return img;
  const double scale = static_cast<double>(max_long) / long_side;
  const Size out{std::max(1, static_cast<int>(std::lround(img.width() * scale))),
                 std::max(1, static_cast<int>(std::lround(img.height() * scale)))};
  return resize_area(img, out);
}

inline Raster resize_nearest(const Raster& img, Size out) {
  if (out.width < 1 || out.height < 1) throw std::invalid_argument("resize_nearest: empty target");
  if (out == img.size()) return img;
  Raster res(out.width, out.height);
  for (int oy = 0; oy < out.height; ++oy) {
    const int sy = std::min(img.height() - 1, static_cast<int>((oy + 0.5) * img.height() / out.height));
    for (int ox = 0; ox < out.width; ++ox) {
      const int sx = std::min(img.width() - 1, static_cast<int>((ox + 0.5) * img.width() / out.width));
      res.at(ox, oy) = img.at(sx, sy);
    }
  }
  return res;
}

inline int quantize_255(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_pgm(const Raster& img, std::ostream& os) {
  os << "P2\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (x) os << ' ';
      os << quantize_255(img.at(x, y));
    }
    os << '\n';
  }
}

inline Raster read_pgm(std::istream& is) {
  auto next_token = [&]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw IoError("PGM: unexpected end of input");
  };
  if (next_token() != "P2") throw IoError("PGM: only P2 (ASCII) is supported");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w < 1 || h < 1 || maxval < 1) throw IoError("PGM: bad header");
  Raster img(w, h);
  for (auto& v : img.pixels()) {
    const int q = std::stoi(next_token());
    if (q < 0 || q > maxval) throw IoError("PGM: sample out of range");
    v = static_cast<double>(q) / maxval;
  }
  return img;
}

}  // namespace zoomrl
