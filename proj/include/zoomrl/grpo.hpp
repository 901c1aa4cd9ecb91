#pragma once

// Group-relative advantages, the clip-higher surrogate, Adam with warmup and
// cosine decay, the training loop and per-category advantage telemetry.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "zoomrl/datamix.hpp"
#include "zoomrl/errors.hpp"
#include "zoomrl/policy.hpp"
#include "zoomrl/rollout.hpp"

namespace zoomrl {

enum class LossAggregation { Token, Sequence };

struct TrainConfig {
  int steps = 800;
  int batch = 4;
  int group = 3;
  double lr_peak = 3e-3;
  int warmup_steps = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double max_grad_norm = 1.0;
  double kl_coeff = 0.0;
  LossAggregation loss_agg = LossAggregation::Token;
  int inner_epochs = 1;

  void validate() const {
    if (steps < 0) throw ConfigError("train.steps must be >= 0");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (group < 2) throw ConfigError("train.group must be >= 2");
    if (!(eps_low > 0.0) || !(eps_high >= eps_low)) throw ConfigError("need eps_low > 0 and eps_high >= eps_low");
    if (kl_coeff != 0.0) throw ConfigError("train.kl_coeff: only the KL-free objective is implemented");
    if (inner_epochs < 1) throw ConfigError("train.inner_epochs must be >= 1");
    if (!(lr_peak >= 0.0) || warmup_steps < 0 || !(max_grad_norm > 0.0))
      throw ConfigError("invalid optimizer settings");
  }
};

/// (r - mean) / population std, or all zeros when the group has no spread.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ConfigError("group_advantages: need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size(), 0.0);
  if (sd > 1e-8)
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

/// Advantages for every trajectory of the batch, in group-major order.
inline std::vector<double> batch_advantages(const GroupBatch& batch) {
  std::vector<double> out;
  for (const auto& g : batch.groups) {
    std::vector<double> r;
    for (const auto& t : g) r.push_back(t.reward.total);
    for (double a : group_advantages(r)) out.push_back(a);
  }
  return out;
}

/// Clipped term min(rho*A, clip(rho, 1-eps_low, 1+eps_high)*A) and whether
/// the gradient flows (false when the clipped branch is strictly smaller).
struct ClippedTerm {
  double value;
  bool grad_flows;
};

inline ClippedTerm clipped_term(double rho, double adv, double eps_low, double eps_high) {
  const double clipped = std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high);
  const double a = rho * adv;
  const double b = clipped * adv;
  return {std::min(a, b), !(b < a)};
}

struct SurrogateResult {
  double loss = 0.0;
  std::vector<double> grad;
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;
};

/// Negative clip-higher objective averaged over decision tokens (or over
/// trajectories), with its gradient. `reference` is accepted for interface
/// parity with KL-regularised variants; with kl_coeff == 0 it is unused.
inline SurrogateResult surrogate_loss(const GroupBatch& batch, std::span<const double> advantages,
                                      const PolicyParams& params, const TrainConfig& cfg,
                                      const PolicyParams* reference = nullptr) {
  (void)reference;
  SurrogateResult res;
  res.grad.assign(params.theta.size(), 0.0);
  std::size_t total_tokens = 0;
  std::size_t n_traj = 0;
  for (const auto& g : batch.groups)
    for (const auto& t : g) {
      total_tokens += t.token_count();
      ++n_traj;
    }
  if (total_tokens == 0) return res;

  std::size_t k = 0;
  for (const auto& g : batch.groups) {
    for (const auto& t : g) {
      const double adv = advantages[k++];
      const double norm = cfg.loss_agg == LossAggregation::Token
                              ? static_cast<double>(total_tokens)
                              : static_cast<double>(t.token_count()) * static_cast<double>(n_traj);
      for (std::size_t di = 0; di < t.decisions.size(); ++di) {
        const auto& d = t.decisions[di];
        const auto now = token_logprobs_of(params, t.inputs[di], d);
        std::vector<double> w(now.size(), 0.0);
        for (std::size_t ti = 0; ti < now.size(); ++ti) {
          const double rho = std::exp(now[ti] - d.token_logprobs[ti]);
          if (!std::isfinite(rho))
            throw NumericalError("non-finite importance ratio (sample " + std::to_string(t.sample_id) + ", seed " +
                                 std::to_string(t.seed) + ")");
          const ClippedTerm term = clipped_term(rho, adv, cfg.eps_low, cfg.eps_high);
          res.loss -= term.value / norm;
          ++res.tokens;
          if (term.grad_flows) w[ti] = -adv * rho / norm;
          else ++res.clipped_tokens;
        }
        accumulate_token_grads(params, t.inputs[di], d, w, res.grad);
      }
    }
  }
  return res;
}

inline double learning_rate(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return cfg.lr_peak * static_cast<double>(step) / cfg.warmup_steps;
  const int decay = std::max(1, cfg.steps - cfg.warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / decay, 0.0, 1.0);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct OptimizerReport {
  double grad_norm_preclip = 0.0;
  double lr = 0.0;
};

/// Global-norm clip, then one Adam step. `step` is 1-based and drives the
/// learning-rate schedule.
inline OptimizerReport optimizer_step(PolicyParams& params, std::span<const double> grad, const TrainConfig& cfg,
                                      int step) {
  double sq = 0.0;
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient at step " + std::to_string(step));
    sq += g * g;
  }
  OptimizerReport rep;
  rep.grad_norm_preclip = std::sqrt(sq);
  rep.lr = learning_rate(cfg, step);
  const double scale = rep.grad_norm_preclip > cfg.max_grad_norm ? cfg.max_grad_norm / rep.grad_norm_preclip : 1.0;
  ++params.version;
  const double t = static_cast<double>(params.version);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < params.theta.size(); ++i) {
    const double g = grad[i] * scale;
    params.adam_m[i] = cfg.adam_beta1 * params.adam_m[i] + (1.0 - cfg.adam_beta1) * g;
    params.adam_v[i] = cfg.adam_beta2 * params.adam_v[i] + (1.0 - cfg.adam_beta2) * g * g;
    const double mhat = params.adam_m[i] / bc1;
    const double vhat = params.adam_v[i] / bc2;
    params.theta[i] -= rep.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Telemetry.

struct CategoryAdvantages {
  std::array<std::optional<double>, kCategoryCount> mean{};
  std::array<double, kCategoryCount> sum{};
  std::array<int, kCategoryCount> count{};
};

inline CategoryAdvantages category_advantage_telemetry(const GroupBatch& batch, std::span<const double> advantages) {
  CategoryAdvantages c;
  std::size_t k = 0;
  for (const auto& g : batch.groups)
    for (const auto& t : g) {
      const auto i = static_cast<std::size_t>(t.category);
      c.sum[i] += advantages[k++];
      ++c.count[i];
    }
  for (std::size_t i = 0; i < c.mean.size(); ++i)
    if (c.count[i] > 0) c.mean[i] = c.sum[i] / c.count[i];
  return c;
}

struct StepStats {
  int step = 0;
  double mean_reward = 0.0;
  double r_answer = 0.0;
  double r_edit = 0.0;
  double r_correct = 0.0;
  double r_format = 0.0;
  double r_tool = 0.0;
  CategoryAdvantages adv;
  std::array<double, kCategoryCount> cumulative_adv{};
  double tool_use_rate = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  double clip_fraction = 0.0;
  double grad_norm_preclip = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<StepStats> stats;
};

struct TrainSetup {
  TrainConfig train;
  RolloutConfig rollout;
  unsigned threads = 1;
  std::function<void(const StepStats&, const PolicyParams&)> on_step;
};

inline StepStats summarize_batch(const GroupBatch& batch, std::span<const double> advantages) {
  StepStats s;
  const double n = static_cast<double>(batch.trajectory_count());
  int tool = 0;
  for (const auto& g : batch.groups)
    for (const auto& t : g) {
      s.mean_reward += t.reward.total / n;
      s.r_answer += t.reward.r_answer / n;
      s.r_edit += t.reward.r_edit / n;
      s.r_correct += t.reward.r_correct / n;
      s.r_format += t.reward.r_format / n;
      s.r_tool += t.reward.r_tool / n;
      if (t.category != TrajectoryCategory::NoTool) ++tool;
    }
  s.tool_use_rate = tool / n;
  s.accuracy = s.r_answer;
  s.adv = category_advantage_telemetry(batch, advantages);
  return s;
}

/// collect -> advantages -> surrogate -> Adam, once per step. Continues from
/// `params.version`, so a resumed run picks up its step counter.
inline TrainResult train(const Dataset& dataset, const DatasetWeighting& weighting, PolicyParams params,
                         const TrainSetup& setup, std::uint64_t seed) {
  setup.train.validate();
  TrainResult out;
  std::array<double, kCategoryCount> cumulative{};
  const int first = static_cast<int>(params.version / static_cast<std::uint64_t>(setup.train.inner_epochs)) + 1;
  for (int step = first; step <= setup.train.steps; ++step) {
    const std::uint64_t step_seed = mix_seed(seed, static_cast<std::uint64_t>(step));
    const GroupBatch batch = collect_batch(params, dataset, weighting, setup.train.batch, setup.train.group, step_seed,
                                           setup.rollout, setup.threads);
    const std::vector<double> adv = batch_advantages(batch);
    StepStats s = summarize_batch(batch, adv);
    s.step = step;
    for (int epoch = 0; epoch < setup.train.inner_epochs; ++epoch) {
      SurrogateResult sr;
      try {
        sr = surrogate_loss(batch, adv, params, setup.train);
      } catch (const NumericalError& e) {
        throw NumericalError("step " + std::to_string(step) + ": " + e.what());
      }
      const OptimizerReport rep = optimizer_step(params, sr.grad, setup.train, step);
      if (epoch == 0) {
        s.loss = sr.loss;
        s.grad_norm_preclip = rep.grad_norm_preclip;
        s.lr = rep.lr;
      }
      s.clip_fraction = sr.tokens ? static_cast<double>(sr.clipped_tokens) / sr.tokens : 0.0;
    }
    if (!params.finite()) throw NumericalError("step " + std::to_string(step) + ": parameters became non-finite");
    for (std::size_t i = 0; i < cumulative.size(); ++i) cumulative[i] += s.adv.sum[i];
    s.cumulative_adv = cumulative;
    if (setup.on_step) setup.on_step(s, params);
    out.stats.push_back(s);
  }
  out.params = std::move(params);
  return out;
}

/// Pooled mean advantage per category over the last `fraction` of steps.
inline std::array<std::optional<double>, kCategoryCount> tail_category_advantages(const std::vector<StepStats>& stats,
                                                                                  double fraction = 0.2) {
  std::array<double, kCategoryCount> sum{};
  std::array<int, kCategoryCount> count{};
  const std::size_t n = stats.size();
  const std::size_t tail = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * fraction));
  for (std::size_t i = n - std::min(n, tail); i < n; ++i)
    for (std::size_t c = 0; c < sum.size(); ++c) {
      sum[c] += stats[i].adv.sum[c];
      count[c] += stats[i].adv.count[c];
    }
  std::array<std::optional<double>, kCategoryCount> out{};
  for (std::size_t c = 0; c < out.size(); ++c)
    if (count[c] > 0) out[c] = sum[c] / count[c];
  return out;
}

// ---------------------------------------------------------------------------
// Greedy evaluation.

struct EvalReport {
  int samples = 0;
  double accuracy = 0.0;
  double tool_use_rate = 0.0;
  double tool_success_rate = 0.0;  // successes / attempts
};

inline EvalReport evaluate(const PolicyParams& params, const std::vector<SyntheticSample>& samples, RolloutConfig cfg,
                           std::uint64_t seed, unsigned threads = 1) {
  cfg.temperature = 0.0;
  std::vector<Trajectory> trajs(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    trajs[i] = run_episode(params, samples[i], cfg, mix_seed(seed, static_cast<std::uint64_t>(samples[i].sample_id)));
  });
  EvalReport r;
  r.samples = static_cast<int>(samples.size());
  int correct = 0, attempts = 0, successes = 0;
  for (const auto& t : trajs) {
    if (t.reward.r_answer == 1.0) ++correct;
    if (t.category != TrajectoryCategory::NoTool) ++attempts;
    if (t.category == TrajectoryCategory::ToolSuccess) ++successes;
  }
  if (!samples.empty()) {
    r.accuracy = static_cast<double>(correct) / samples.size();
    r.tool_use_rate = static_cast<double>(attempts) / samples.size();
  }
  r.tool_success_rate = attempts ? static_cast<double>(successes) / attempts : 0.0;
  return r;
}

}  // namespace zoomrl
