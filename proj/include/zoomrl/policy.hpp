#pragma once

// Toy policy: features -> tanh hidden layer -> tool-flag and answer heads,
// plus a keypoint head that scores every bin with one shared linear filter
// over the observation pixels under it. Exact log-probabilities and
// hand-derived gradients.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "zoomrl/decision.hpp"
#include "zoomrl/env.hpp"
#include "zoomrl/errors.hpp"
#include "zoomrl/raster.hpp"

namespace zoomrl {

// Pixels enter as kPixelGain * (v - 0.5) so a glyph's contrast is of order
// one. The keypoint filter is scaled by kKeyFilterGain: with Adam's
// size-invariant steps this sets how fast bin preferences can sharpen.
inline constexpr double kPixelGain = 4.0;
inline constexpr double kKeyFilterGain = 10.0;
// Initial keypoint filter tap: a mild preference for regions darker than the
// background. Without it the pointer starts uniform and RL rarely sees the
// glyph often enough to learn reading before the answer head collapses.
inline constexpr double kKeyFilterInit = -0.05;

struct PolicyShape {
  int input_dim = 0;
  int hidden = 64;
  int key_grid = 8;       // G_k; the keypoint head scores G_k * G_k bins
  int answer_options = 9; // alphabet plus "unknown"

  int key_bins() const { return key_grid * key_grid; }
  // Observation side recovered from the feature layout (2 * obs^2 + 3).
  int obs_side() const { return static_cast<int>(std::lround(std::sqrt((input_dim - 3) / 2.0))); }
  // Each bin scores the observation pixels under it plus a one-pixel ring.
  int patch_side() const { return obs_side() / key_grid + 2; }
  int patch_len() const { return patch_side() * patch_side(); }

  // (fan_in, fan_out) per layer: trunk, tool head, keypoint filter, answer head.
  std::vector<std::pair<int, int>> layer_shapes() const {
    return {{input_dim, hidden}, {hidden, 1}, {patch_len(), 1}, {hidden, answer_options}};
  }
  // Every layer has a bias except the keypoint filter (a shared offset would
  // cancel in the softmax).
  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto [in, out] : layer_shapes()) n += static_cast<std::size_t>(in) * out + out;
    return n - 1;
  }
  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

inline int feature_dim(const EnvConfig& cfg) { return 2 * cfg.obs_size * cfg.obs_size + 3; }

inline PolicyShape default_shape(const EnvConfig& cfg, int hidden = 64, int key_grid = 8) {
  return {feature_dim(cfg), hidden, key_grid, cfg.alphabet_size + 1};
}

// Offsets of each block inside theta.
struct ParamLayout {
  std::size_t w1, b1, wt, bt, wp, wa, ba, total;

  explicit ParamLayout(const PolicyShape& s) {
    const auto D = static_cast<std::size_t>(s.input_dim);
    const auto H = static_cast<std::size_t>(s.hidden);
    const auto A = static_cast<std::size_t>(s.answer_options);
    w1 = 0;
    b1 = w1 + H * D;
    wt = b1 + H;
    bt = wt + H;
    wp = bt + 1;
    wa = wp + static_cast<std::size_t>(s.patch_len());
    ba = wa + A * H;
    total = ba + A;
  }
};

struct PolicyParams {
  PolicyShape shape;
  std::vector<double> theta;
  std::uint64_t version = 0;
  // Adam moments, same length as theta.
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t rng_seed = 0;

  static PolicyParams zeros(const PolicyShape& shape) {
    PolicyParams p;
    p.shape = shape;
    p.theta.assign(shape.param_count(), 0.0);
    p.adam_m.assign(p.theta.size(), 0.0);
    p.adam_v.assign(p.theta.size(), 0.0);
    return p;
  }

  /// Weights uniform in [-0.05, 0.05], biases zero; the keypoint filter
  /// starts at kKeyFilterInit.
  static PolicyParams init(const PolicyShape& shape, std::uint64_t seed) {
    PolicyParams p = zeros(shape);
    p.rng_seed = seed;
    std::mt19937_64 rng(mix_seed(seed, 0x5eedull));
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    const ParamLayout L(shape);
    const std::pair<std::size_t, std::size_t> weights[] = {{L.w1, L.b1}, {L.wt, L.bt}, {L.wp, L.wa}, {L.wa, L.ba}};
    for (auto [begin, end] : weights)
      for (std::size_t i = begin; i < end; ++i) p.theta[i] = u(rng);
    std::fill(p.theta.begin() + static_cast<std::ptrdiff_t>(L.wp), p.theta.begin() + static_cast<std::ptrdiff_t>(L.wa),
              kKeyFilterInit);
    return p;
  }

  bool finite() const {
    return std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); });
  }
};


struct PolicyInput {
  std::vector<double> features;
  bool crop_present = false;
};

/// Observation and crop pixels are centred around 0.5; an absent crop is all zeros.
inline PolicyInput make_policy_input(const Raster& obs, const Raster* crop, std::optional<Keypoint> kp,
                                     Size image, bool crop_present) {
  PolicyInput in;
  in.crop_present = crop_present;
  in.features.reserve(obs.pixels().size() * 2 + 3);
  for (double v : obs.pixels()) in.features.push_back(kPixelGain * (v - 0.5));
  for (std::size_t i = 0; i < obs.pixels().size(); ++i)
    in.features.push_back(crop ? kPixelGain * (crop->pixels()[i] - 0.5) : 0.0);
  in.features.push_back(crop_present ? 1.0 : 0.0);
  in.features.push_back(kp ? (kp->x + 0.5) / image.width : 0.0);
  in.features.push_back(kp ? (kp->y + 0.5) / image.height : 0.0);
  return in;
}

/// Calls fn(bin, tap, value) for every observation pixel in each bin's patch;
/// taps falling outside the observation are skipped (zero padding).
template <class Fn>
void for_each_patch_tap(const PolicyShape& s, std::span<const double> features, Fn&& fn) {
  const int obs = s.obs_side();
  const int r = obs / s.key_grid;
  const int side = s.patch_side();
  for (int by = 0; by < s.key_grid; ++by)
    for (int bx = 0; bx < s.key_grid; ++bx)
      for (int dy = 0; dy < side; ++dy)
        for (int dx = 0; dx < side; ++dx) {
          const int oy = by * r - 1 + dy;
          const int ox = bx * r - 1 + dx;
          if (oy < 0 || ox < 0 || oy >= obs || ox >= obs) continue;
          fn(static_cast<std::size_t>(by * s.key_grid + bx), static_cast<std::size_t>(dy * side + dx),
             features[static_cast<std::size_t>(oy * obs + ox)]);
        }
}

struct Forward {
  std::vector<double> hidden;
  double tool_logit = 0.0;
  std::vector<double> key_logits;
  std::vector<double> ans_logits;
};

inline Forward forward(const PolicyParams& p, const PolicyInput& in) {
  const PolicyShape& s = p.shape;
  if (static_cast<int>(in.features.size()) != s.input_dim)
    throw ConfigError("policy input has " + std::to_string(in.features.size()) + " features, network expects " +
                      std::to_string(s.input_dim));
  const ParamLayout L(s);
  const double* th = p.theta.data();
  const auto D = static_cast<std::size_t>(s.input_dim);
  Forward f;
  f.hidden.resize(static_cast<std::size_t>(s.hidden));
  for (std::size_t h = 0; h < f.hidden.size(); ++h) {
    const double* row = th + L.w1 + h * D;
    double acc = th[L.b1 + h];
    for (std::size_t i = 0; i < D; ++i) acc += row[i] * in.features[i];
    f.hidden[h] = std::tanh(acc);
  }
  auto head = [&](std::size_t w, std::size_t b, int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (std::size_t o = 0; o < out.size(); ++o) {
      double acc = th[b + o];
      const double* row = th + w + o * f.hidden.size();
      for (std::size_t h = 0; h < f.hidden.size(); ++h) acc += row[h] * f.hidden[h];
      out[o] = acc;
    }
    return out;
  };
  f.tool_logit = head(L.wt, L.bt, 1)[0];
  f.key_logits.assign(static_cast<std::size_t>(s.key_bins()), 0.0);
  for_each_patch_tap(s, in.features, [&](std::size_t bin, std::size_t tap, double v) {
    f.key_logits[bin] += kKeyFilterGain * th[L.wp + tap] * v;
  });
  f.ans_logits = head(L.wa, L.ba, s.answer_options);

  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::isfinite(f.tool_logit) || !std::all_of(f.key_logits.begin(), f.key_logits.end(), finite) ||
      !std::all_of(f.ans_logits.begin(), f.ans_logits.end(), finite))
    throw NumericalError("policy produced non-finite logits");
  return f;
}

// log sigmoid(u), stable for large |u|.
inline double log_sigmoid(double u) { return u >= 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u)); }

inline double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double z = 0.0;
  for (double l : logits) z += std::exp(l / temperature - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::size_t sample_categorical(std::span<const double> logp, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double c = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    c += std::exp(logp[i]);
    if (u < c) return i;
  }
  // rounding: fall back to the last index with non-zero mass
  for (std::size_t i = logp.size(); i-- > 0;)
    if (std::exp(logp[i]) > 0.0) return i;
  return logp.size() - 1;
}

inline std::string answer_text(int idx, int alphabet_size) {
  return idx < alphabet_size ? symbol_name(idx) : std::string(kUnknownAnswer);
}

/// Pixel coordinates of a keypoint bin's centre in an image of size `image`.
inline Keypoint bin_center(int bin, int grid, Size image) {
  const int bx = bin % grid;
  const int by = bin / grid;
  return {static_cast<int>((bx + 0.5) * image.width / grid), static_cast<int>((by + 0.5) * image.height / grid)};
}

/// temperature <= 0 selects greedy decoding; every selected token then has logprob 0.
inline StructuredDecision act_turn1(const PolicyParams& p, const PolicyInput& in, double temperature,
                                    std::mt19937_64& rng, Size image) {
  if (in.crop_present) throw std::invalid_argument("act_turn1: crop must be absent on the first turn");
  const Forward f = forward(p, in);
  const bool greedy = temperature <= 0.0;
  StructuredDecision d;
  d.tool_flag_sampled = true;
  const int alphabet = p.shape.answer_options - 1;
  bool use_tool = false;
  if (greedy) {
    use_tool = f.tool_logit >= 0.0;
    d.token_logprobs.push_back(0.0);
  } else {
    const double pt = sigmoid(f.tool_logit / temperature);
    use_tool = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < pt;
    d.token_logprobs.push_back(use_tool ? log_sigmoid(f.tool_logit / temperature)
                                        : log_sigmoid(-f.tool_logit / temperature));
  }
  if (use_tool) {
    d.kind = DecisionKind::Tool;
    if (greedy) {
      d.keypoint_bin = static_cast<int>(argmax(f.key_logits));
      d.token_logprobs.push_back(0.0);
    } else {
      const auto lp = log_softmax(f.key_logits, temperature);
      d.keypoint_bin = static_cast<int>(sample_categorical(lp, rng));
      d.token_logprobs.push_back(lp[static_cast<std::size_t>(d.keypoint_bin)]);
    }
    d.keypoint = bin_center(d.keypoint_bin, p.shape.key_grid, image);
  } else {
    d.kind = DecisionKind::Answer;
    if (greedy) {
      d.answer_idx = static_cast<int>(argmax(f.ans_logits));
      d.token_logprobs.push_back(0.0);
    } else {
      const auto lp = log_softmax(f.ans_logits, temperature);
      d.answer_idx = static_cast<int>(sample_categorical(lp, rng));
      d.token_logprobs.push_back(lp[static_cast<std::size_t>(d.answer_idx)]);
    }
    d.answer = answer_text(d.answer_idx, alphabet);
  }
  return d;
}

/// Second turn: the answer-only grammar leaves a single answer token.
inline StructuredDecision act_turn2(const PolicyParams& p, const PolicyInput& in, std::mt19937_64& rng,
                                    double temperature = 1.0) {
  if (!in.crop_present) throw std::invalid_argument("act_turn2: expects the post-tool input");
  const Forward f = forward(p, in);
  StructuredDecision d;
  d.kind = DecisionKind::Answer;
  if (temperature <= 0.0) {
    d.answer_idx = static_cast<int>(argmax(f.ans_logits));
    d.token_logprobs.push_back(0.0);
  } else {
    const auto lp = log_softmax(f.ans_logits, temperature);
    d.answer_idx = static_cast<int>(sample_categorical(lp, rng));
    d.token_logprobs.push_back(lp[static_cast<std::size_t>(d.answer_idx)]);
  }
  d.answer = answer_text(d.answer_idx, p.shape.answer_options - 1);
  return d;
}

/// Per-token log-probabilities of `d` under `p`, in sampling order.
inline std::vector<double> token_logprobs_of(const PolicyParams& p, const PolicyInput& in,
                                             const StructuredDecision& d, double temperature = 1.0) {
  const Forward f = forward(p, in);
  std::vector<double> out;
  if (d.tool_flag_sampled) {
    const double u = f.tool_logit / temperature;
    out.push_back(d.kind == DecisionKind::Tool ? log_sigmoid(u) : log_sigmoid(-u));
  } else if (d.kind == DecisionKind::Tool) {
    throw std::invalid_argument("a forced-answer turn cannot hold a tool decision");
  }
  if (d.kind == DecisionKind::Tool)
    out.push_back(log_softmax(f.key_logits, temperature).at(static_cast<std::size_t>(d.keypoint_bin)));
  else
    out.push_back(log_softmax(f.ans_logits, temperature).at(static_cast<std::size_t>(d.answer_idx)));
  return out;
}

inline double logprob_of(const PolicyParams& p, const PolicyInput& in, const StructuredDecision& d,
                         double temperature = 1.0) {
  double acc = 0.0;
  for (double l : token_logprobs_of(p, in, d, temperature)) acc += l;
  return acc;
}

/// Adds sum_t weights[t] * d(log p_t)/d(theta) into `grad`, one weight per
/// token of `d` (same order as token_logprobs_of).
inline void accumulate_token_grads(const PolicyParams& p, const PolicyInput& in, const StructuredDecision& d,
                                   std::span<const double> weights, std::span<double> grad,
                                   double temperature = 1.0) {
  const PolicyShape& s = p.shape;
  const ParamLayout L(s);
  const Forward f = forward(p, in);
  const std::size_t H = f.hidden.size();
  std::vector<double> dh(H, 0.0);
  const double* th = p.theta.data();
  std::size_t t = 0;

  auto backprop_head = [&](std::size_t w, std::size_t b, std::span<const double> dlogits) {
    for (std::size_t o = 0; o < dlogits.size(); ++o) {
      const double g = dlogits[o];
      if (g == 0.0) continue;
      grad[b + o] += g;
      const double* row = th + w + o * H;
      double* grow = grad.data() + w + o * H;
      for (std::size_t h = 0; h < H; ++h) {
        grow[h] += g * f.hidden[h];
        dh[h] += g * row[h];
      }
    }
  };
  auto categorical = [&](std::span<const double> logits, int chosen, double weight) {
    const auto lp = log_softmax(logits, temperature);
    std::vector<double> dl(logits.size());
    for (std::size_t j = 0; j < dl.size(); ++j)
      dl[j] = weight * ((static_cast<int>(j) == chosen ? 1.0 : 0.0) - std::exp(lp[j])) / temperature;
    return dl;
  };

  if (d.tool_flag_sampled) {
    const double w = weights[t++];
    const double pt = sigmoid(f.tool_logit / temperature);
    const double dz = w * (d.kind == DecisionKind::Tool ? (1.0 - pt) : -pt) / temperature;
    const double one[1] = {dz};
    backprop_head(L.wt, L.bt, one);
  }
  if (d.kind == DecisionKind::Tool) {
    const auto dl = categorical(f.key_logits, d.keypoint_bin, weights[t++]);
    for_each_patch_tap(s, in.features, [&](std::size_t bin, std::size_t tap, double v) {
      grad[L.wp + tap] += kKeyFilterGain * dl[bin] * v;
    });
  } else {
    const auto dl = categorical(f.ans_logits, d.answer_idx, weights[t++]);
    backprop_head(L.wa, L.ba, dl);
  }

  const auto D = static_cast<std::size_t>(s.input_dim);
  for (std::size_t h = 0; h < H; ++h) {
    const double dpre = dh[h] * (1.0 - f.hidden[h] * f.hidden[h]);
    if (dpre == 0.0) continue;
    grad[L.b1 + h] += dpre;
    double* grow = grad.data() + L.w1 + h * D;
    for (std::size_t i = 0; i < D; ++i) grow[i] += dpre * in.features[i];
  }
}

inline std::vector<double> grad_logprob(const PolicyParams& p, const PolicyInput& in, const StructuredDecision& d,
                                        double temperature = 1.0) {
  std::vector<double> g(p.theta.size(), 0.0);
  const std::vector<double> ones(d.tool_flag_sampled ? 2 : 1, 1.0);
  accumulate_token_grads(p, in, d, ones, g, temperature);
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints: a magic line, a JSON header line, then theta, adam_m and
// adam_v as little-endian IEEE-754 doubles.

inline constexpr std::string_view kCheckpointMagic = "ZOOMRL-CKPT 1";

namespace detail {

inline void put_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

inline double get_le(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw IoError("checkpoint: truncated parameter block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const PolicyParams& p) {
  nlohmann::json header = {{"layer_shapes", p.shape.layer_shapes()},
                           {"key_grid", p.shape.key_grid},
                           {"version", p.version},
                           {"rng_seed", p.rng_seed},
                           {"param_count", p.theta.size()}};
  os << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto* block : {&p.theta, &p.adam_m, &p.adam_v})
    for (double v : *block) detail::put_le(os, v);
}

inline PolicyParams load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw IoError("checkpoint: bad magic line");
  if (!std::getline(is, line)) throw IoError("checkpoint: missing header");
  PolicyParams p;
  try {
    const auto h = nlohmann::json::parse(line);
    const auto shapes = h.at("layer_shapes").get<std::vector<std::pair<int, int>>>();
    if (shapes.size() != 4) throw IoError("checkpoint: expected 4 layers");
    PolicyShape s;
    s.input_dim = shapes[0].first;
    s.hidden = shapes[0].second;
    s.key_grid = h.at("key_grid").get<int>();
    s.answer_options = shapes[3].second;
    if (s.layer_shapes() != shapes) throw IoError("checkpoint: inconsistent layer shapes");
    p = PolicyParams::zeros(s);
    if (h.at("param_count").get<std::size_t>() != p.theta.size()) throw IoError("checkpoint: parameter count mismatch");
    p.version = h.at("version").get<std::uint64_t>();
    p.rng_seed = h.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  for (auto* block : {&p.theta, &p.adam_m, &p.adam_v})
    for (double& v : *block) v = detail::get_le(is);
  return p;
}

}  // namespace zoomrl
