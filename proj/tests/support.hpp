#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "zoomrl/policy.hpp"
#include "zoomrl/rollout.hpp"

namespace zoomrl::testing {

// 32px canvas seen at 8x8: same perception factor as the defaults, small
// enough for exhaustive and finite-difference checks.
inline EnvConfig small_env() {
  EnvConfig e;
  e.canvas_size = 32;
  e.obs_size = 8;
  return e;
}

inline RolloutConfig small_rollout() {
  RolloutConfig r;
  r.env = small_env();
  r.max_long_side = 32;
  return r;
}

inline PolicyShape small_shape() { return default_shape(small_env(), 5, 4); }

inline PolicyParams random_params(const PolicyShape& s, std::uint64_t seed, double scale = 0.3) {
  PolicyParams p = PolicyParams::init(s, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : p.theta) v = u(rng);
  return p;
}

inline Raster random_raster(int side, std::mt19937_64& rng) {
  Raster r(side, side);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : r.pixels()) v = u(rng);
  return r;
}

// Count of `<tool>` segments in assistant turns; the tool budget allows one.
inline int tool_blocks(const Trajectory& t) {
  int n = 0;
  for (const auto& turn : t.transcript.turns)
    if (turn.speaker == Speaker::Assistant)
      for (const auto& s : turn.segments) n += s.kind == SegmentKind::Tool;
  return n;
}

}  // namespace zoomrl::testing
