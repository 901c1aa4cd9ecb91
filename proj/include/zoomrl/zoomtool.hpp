#pragma once

// Keypoint zoom tool: fixed-size crop centred on a pixel, resized to the
// dimensions of the image the policy was shown.

#include <algorithm>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>

#include "zoomrl/decision.hpp"
#include "zoomrl/errors.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/raster.hpp"

namespace zoomrl {

enum class ZoomSource { Downsized, Original };

struct ZoomConfig {
  int crop_size = 16;
  // Target size for the crop. Unset keeps the crop at its native size.
  std::optional<Size> output_size;
  ZoomSource source = ZoomSource::Downsized;
  // When set, the adapter resizes the crop to match the downsized input image.
  bool resize_crop = true;
};

struct EpisodeImages {
  Raster original;
  Raster downsized;
};

struct ToolResultPayload {
  bool success = false;
  std::optional<Raster> crop;
  std::string result_text;  // the `<result>` turn
  std::string error;
};

inline constexpr std::string_view kToolErrorText = "error: invalid tool call";

/// Accepts `x,y`, with optional spaces and surrounding parentheses.
inline std::optional<Keypoint> parse_keypoint(std::string_view text) {
  std::string s;
  for (char c : text)
    if (c != ' ' && c != '\t') s += c;
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')') s = s.substr(1, s.size() - 2);
  const auto comma = s.find(',');
  if (comma == std::string::npos) return std::nullopt;
  auto parse_int = [](std::string_view v) -> std::optional<int> {
    int out = 0;
    if (v.empty()) return std::nullopt;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) return std::nullopt;
    return out;
  };
  auto x = parse_int(std::string_view(s).substr(0, comma));
  auto y = parse_int(std::string_view(s).substr(comma + 1));
  if (!x || !y) return std::nullopt;
  return Keypoint{*x, *y};
}

inline ToolSpec zoom_tool_spec() {
  return ToolSpec{
      "zoom",
      "Zoom in on the image. Returns a fixed-size crop centered at the keypoint.\n"
      "Example:\nname: zoom\nkeypoint: 12,40",
      {ToolArgSpec{"keypoint", true,
                   [](std::string_view v) { return parse_keypoint(v).has_value(); }}},
  };
}

inline ToolRegistry default_registry() {
  ToolRegistry r;
  r.add(zoom_tool_spec());
  return r;
}

/// Top-left corner of the crop window centred at `kp`, shifted inward so the
/// window stays inside the image.
inline Keypoint crop_origin(Size image, Keypoint kp, int crop_size) {
  auto axis = [&](int c, int extent) {
    const int w = std::min(crop_size, extent);
    return std::clamp(c - crop_size / 2, 0, extent - w);
  };
  return {axis(kp.x, image.width), axis(kp.y, image.height)};
}

inline Raster zoom(const Raster& img, Keypoint kp, const ZoomConfig& cfg) {
  if (cfg.crop_size < 1) throw ConfigError("zoom: crop_size must be >= 1");
  if (kp.x < 0 || kp.y < 0 || kp.x >= img.width() || kp.y >= img.height())
    throw OutOfBounds("zoom: keypoint (" + std::to_string(kp.x) + "," + std::to_string(kp.y) +
                      ") outside " + std::to_string(img.width()) + "x" + std::to_string(img.height()));
  const Keypoint o = crop_origin(img.size(), kp, cfg.crop_size);
  const int w = std::min(cfg.crop_size, img.width());
  const int h = std::min(cfg.crop_size, img.height());
  Raster window(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) window.at(x, y) = img.at(o.x + x, o.y + y);
  return cfg.output_size ? resize_nearest(window, *cfg.output_size) : window;
}

inline ToolResultPayload tool_failure(std::string why) {
  ToolResultPayload p;
  p.error = std::move(why);
  p.result_text = "<result>\n" + std::string(kToolErrorText) + "\n</result>";
  return p;
}

/// Executes a parsed zoom call against the episode's images.
inline ToolResultPayload zoom_tool_adapter(const ToolCall& call, const EpisodeImages& images,
                                           const ZoomConfig& cfg) {
  if (call.status != ToolCallStatus::ParsedValid) return tool_failure("call did not parse");
  if (call.name != "zoom") return tool_failure("not a zoom call");
  const std::string* arg = call.arg("keypoint");
  const auto kp = arg ? parse_keypoint(*arg) : std::nullopt;
  if (!kp) return tool_failure("bad keypoint argument");

  const Raster& src = cfg.source == ZoomSource::Original ? images.original : images.downsized;
  ZoomConfig effective = cfg;
  effective.output_size =
      cfg.resize_crop ? std::optional<Size>(images.downsized.size()) : std::nullopt;
  try {
    ToolResultPayload p;
    p.crop = zoom(src, *kp, effective);
    p.success = true;
    p.result_text = "<result>\n" + std::string(kImageSlot) + "\n</result>";
    return p;
  } catch (const OutOfBounds& e) {
    return tool_failure(e.what());
  }
}

}  // namespace zoomrl
