#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "support.hpp"
#include "zoomrl/grpo.hpp"

using namespace zoomrl;
using namespace zoomrl::testing;

namespace {

GroupBatch small_batch(const PolicyParams& behaviour, int groups, std::uint64_t seed) {
  EnvConfig e = small_env();
  static const Dataset ds(generate(e, 20));
  return collect_batch(behaviour, ds, uniform_weighting(ds.samples()), groups, 3, seed, small_rollout());
}

Trajectory with_reward(TrajectoryCategory c, double total) {
  Trajectory t;
  t.category = c;
  t.reward.total = total;
  return t;
}

}  // namespace

TEST(Advantages, WorkedExample) {
  const std::vector<double> r{2.1, 1.0, 0.0};
  // oracle: mean 1.0333.., population std 0.8576..
  const double mean = 3.1 / 3.0;
  const double sd = std::sqrt(((2.1 - mean) * (2.1 - mean) + (1.0 - mean) * (1.0 - mean) + mean * mean) / 3.0);
  const auto a = group_advantages(r);
  EXPECT_NEAR(a[0], (2.1 - mean) / sd, 1e-12);
  EXPECT_NEAR(a[1], (1.0 - mean) / sd, 1e-12);
  EXPECT_NEAR(a[2], -mean / sd, 1e-12);
  EXPECT_NEAR(a[0], 1.2432, 2e-3);
  EXPECT_NEAR(a[2], -1.2043, 2e-3);
}

TEST(Advantages, ZeroVarianceGivesZeros) {
  for (double a : group_advantages(std::vector<double>{1.7, 1.7, 1.7})) EXPECT_EQ(a, 0.0);
  EXPECT_THROW(group_advantages(std::vector<double>{1.0}), ConfigError);
}

TEST(Advantages, NormalizationIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.1);
  for (int i = 0; i < 10000; ++i) {
    const std::vector<double> r{u(rng), u(rng), u(rng)};
    const auto a = group_advantages(r);
    const double m = (a[0] + a[1] + a[2]) / 3.0;
    const double sd = std::sqrt(((a[0] - m) * (a[0] - m) + (a[1] - m) * (a[1] - m) + (a[2] - m) * (a[2] - m)) / 3.0);
    ASSERT_LE(std::abs(m), 1e-12);
    ASSERT_NEAR(sd, 1.0, 1e-9);
  }
}

TEST(Clip, SignCaseTable) {
  const double lo = 0.2, hi = 0.28;
  struct Row {
    double rho, adv, value;
    bool flows;
  } rows[] = {
      {0.5, +1, 0.5, true},    // below, A>0: unclipped branch is the min
      {0.5, -1, -0.8, false},  // below, A<0: clipped at 1-eps_low
      {1.1, +1, 1.1, true},    // inside
      {1.1, -1, -1.1, true},
      {1.5, +1, 1.28, false},  // above, A>0: clipped at 1+eps_high
      {1.5, -1, -1.5, true},   // above, A<0: unclipped is the min
      {0.7, -1, -0.8, false},
  };
  for (const auto& r : rows) {
    const auto t = clipped_term(r.rho, r.adv, lo, hi);
    EXPECT_NEAR(t.value, r.value, 1e-12) << r.rho << " " << r.adv;
    EXPECT_EQ(t.grad_flows, r.flows) << r.rho << " " << r.adv;
  }
}

TEST(Clip, HigherUpperBoundDiffersFromSymmetric) {
  // rho = 1.25 with A > 0: symmetric 0.2 clips, clip-higher does not
  EXPECT_FALSE(clipped_term(1.25, 1.0, 0.2, 0.2).grad_flows);
  EXPECT_TRUE(clipped_term(1.25, 1.0, 0.2, 0.28).grad_flows);
  EXPECT_NEAR(clipped_term(1.25, 1.0, 0.2, 0.2).value, 1.2, 1e-12);
  EXPECT_NEAR(clipped_term(1.25, 1.0, 0.2, 0.28).value, 1.25, 1e-12);
}

TEST(Surrogate, OnPolicyIdentity) {
  const PolicyParams p = random_params(small_shape(), 4);
  const GroupBatch b = small_batch(p, 4, 9);
  const auto adv = batch_advantages(b);
  TrainConfig cfg;
  const auto res = surrogate_loss(b, adv, p, cfg);
  std::size_t T = 0;
  double expect_loss = 0.0;
  std::vector<double> pg(p.theta.size(), 0.0);
  std::size_t k = 0;
  for (const auto& g : b.groups)
    for (const auto& t : g) {
      T += t.token_count();
      const double a = adv[k++];
      expect_loss -= a * static_cast<double>(t.token_count());
      for (std::size_t d = 0; d < t.decisions.size(); ++d) {
        const auto gl = grad_logprob(p, t.inputs[d], t.decisions[d]);
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] -= a * gl[i];
      }
    }
  EXPECT_NEAR(res.loss, expect_loss / static_cast<double>(T), 1e-12);
  EXPECT_EQ(res.clipped_tokens, 0u);
  for (std::size_t i = 0; i < pg.size(); ++i) ASSERT_NEAR(res.grad[i], pg[i] / static_cast<double>(T), 1e-10);
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
  TrainConfig cfg;
  double worst = 0.0;
  const double h = 1e-6;
  for (int c = 0; c < 6; ++c) {
    const PolicyParams old = random_params(small_shape(), static_cast<std::uint64_t>(50 + c));
    const GroupBatch b = small_batch(old, 2, static_cast<std::uint64_t>(c));
    const auto adv = batch_advantages(b);
    PolicyParams p = old;
    std::mt19937_64 rng(static_cast<std::uint64_t>(c));
    for (auto& v : p.theta) v += std::normal_distribution<double>(0.0, 0.05)(rng);
    cfg.loss_agg = c % 2 ? LossAggregation::Sequence : LossAggregation::Token;
    const auto res = surrogate_loss(b, adv, p, cfg);
    PolicyParams q = p;
    for (std::size_t i = 0; i < p.theta.size(); i += 3) {
      q.theta[i] = p.theta[i] + h;
      const double up = surrogate_loss(b, adv, q, cfg).loss;
      q.theta[i] = p.theta[i] - h;
      const double dn = surrogate_loss(b, adv, q, cfg).loss;
      q.theta[i] = p.theta[i];
      const double fd = (up - dn) / (2 * h);
      const double scale = std::max(std::abs(fd), std::abs(res.grad[i]));
      if (scale < 1e-7) continue;
      worst = std::max(worst, std::abs(fd - res.grad[i]) / scale);
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Optimizer, ZeroGradientOnlyBumpsVersion) {
  PolicyParams p = random_params(small_shape(), 2);
  const auto before = p.theta;
  TrainConfig cfg;
  optimizer_step(p, std::vector<double>(p.theta.size(), 0.0), cfg, 3);
  EXPECT_EQ(p.theta, before);
  EXPECT_EQ(p.version, 1u);
}

TEST(Optimizer, ClipsByGlobalNorm) {
  PolicyParams p = PolicyParams::zeros(small_shape());
  std::vector<double> g(p.theta.size(), 0.0);
  g[0] = 3.0;
  g[1] = 4.0;
  TrainConfig cfg;
  const auto rep = optimizer_step(p, g, cfg, 1);
  EXPECT_DOUBLE_EQ(rep.grad_norm_preclip, 5.0);
  EXPECT_NEAR(p.adam_m[0], 0.1 * 3.0 * 0.2, 1e-15);
  EXPECT_NEAR(p.adam_m[1], 0.1 * 4.0 * 0.2, 1e-15);
  EXPECT_NEAR(p.adam_v[1], 0.02 * 0.8 * 0.8, 1e-15);
  // first Adam step moves by lr * sign(g)
  EXPECT_NEAR(p.theta[0], -rep.lr, 1e-9);
}

TEST(Optimizer, NonFiniteGradientAborts) {
  PolicyParams p = PolicyParams::zeros(small_shape());
  std::vector<double> g(p.theta.size(), 0.0);
  g[5] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(optimizer_step(p, g, TrainConfig{}, 1), NumericalError);
}

TEST(Schedule, WarmupThenCosine) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 5), 0.5 * cfg.lr_peak);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 10), cfg.lr_peak);
  EXPECT_NEAR(learning_rate(cfg, cfg.steps), 0.0, 1e-18);
  const int mid = cfg.warmup_steps + (cfg.steps - cfg.warmup_steps) / 2;
  EXPECT_NEAR(learning_rate(cfg, mid), 0.5 * cfg.lr_peak, 1e-12);
}

TEST(Config, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.kl_coeff = 0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.eps_high = 0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.group = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Telemetry, PartitionIdentity) {
  GroupBatch b;
  b.group_size = 3;
  b.groups = {{with_reward(TrajectoryCategory::ToolSuccess, 2.1), with_reward(TrajectoryCategory::NoTool, 1.0),
               with_reward(TrajectoryCategory::ToolFail, 0.0)},
              {with_reward(TrajectoryCategory::ToolSuccess, 2.0), with_reward(TrajectoryCategory::ToolSuccess, 1.1),
               with_reward(TrajectoryCategory::NoTool, 0.5)}};
  const auto adv = batch_advantages(b);
  const auto c = category_advantage_telemetry(b, adv);
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < kCategoryCount; ++k) {
    sum += c.sum[k];
    n += c.count[k];
  }
  EXPECT_NEAR(sum / n, std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size(), 1e-12);
  EXPECT_EQ(c.count[0] + c.count[1] + c.count[2], 6);
  EXPECT_GT(*c.mean[1], *c.mean[0]);
  EXPECT_GT(*c.mean[1], *c.mean[2]);
}

TEST(Telemetry, SingleCategory) {
  GroupBatch b;
  b.groups = {{with_reward(TrajectoryCategory::NoTool, 1.0), with_reward(TrajectoryCategory::NoTool, 0.0)}};
  const auto c = category_advantage_telemetry(b, batch_advantages(b));
  EXPECT_TRUE(c.mean[0].has_value());
  EXPECT_FALSE(c.mean[1].has_value());
  EXPECT_FALSE(c.mean[2].has_value());
}

TEST(Train, ZeroStepsIsIdentity) {
  EnvConfig e = small_env();
  const Dataset ds(generate(e, 10));
  TrainSetup setup;
  setup.train.steps = 0;
  setup.rollout = small_rollout();
  const PolicyParams p = PolicyParams::init(small_shape(), 1);
  const auto r = train(ds, uniform_weighting(ds.samples()), p, setup, 5);
  EXPECT_TRUE(r.stats.empty());
  EXPECT_EQ(r.params.theta, p.theta);
}

TEST(Train, DeterministicAndResumable) {
  EnvConfig e = small_env();
  const Dataset ds(generate(e, 30));
  const auto w = uniform_weighting(ds.samples());
  TrainSetup setup;
  setup.train.steps = 30;
  setup.rollout = small_rollout();
  const PolicyParams p0 = PolicyParams::init(small_shape(), 1);
  const auto a = train(ds, w, p0, setup, 5);
  const auto b = train(ds, w, p0, setup, 5);
  ASSERT_EQ(a.stats.size(), 30u);
  EXPECT_EQ(a.params.theta, b.params.theta);
  for (std::size_t i = 0; i < a.stats.size(); ++i) {
    EXPECT_EQ(a.stats[i].mean_reward, b.stats[i].mean_reward);
    EXPECT_EQ(a.stats[i].loss, b.stats[i].loss);
    EXPECT_EQ(a.stats[i].step, static_cast<int>(i) + 1);
  }

  // stop at 12, checkpoint, resume to 30
  TrainSetup first = setup;
  PolicyParams mid;
  first.on_step = [&](const StepStats& s, const PolicyParams& p) {
    if (s.step == 12) mid = p;
  };
  train(ds, w, p0, first, 5);
  std::stringstream ss;
  save_checkpoint(ss, mid);
  const auto resumed = train(ds, w, load_checkpoint(ss), setup, 5);
  ASSERT_EQ(resumed.stats.size(), 18u);
  EXPECT_EQ(resumed.stats.front().step, 13);
  EXPECT_EQ(resumed.params.theta, a.params.theta);
  EXPECT_EQ(resumed.stats.back().loss, a.stats.back().loss);
}

TEST(Train, TailAdvantagesPoolLastFifth) {
  std::vector<StepStats> stats(10);
  for (int i = 0; i < 10; ++i) {
    stats[static_cast<std::size_t>(i)].adv.sum = {static_cast<double>(i), 0.0, 0.0};
    stats[static_cast<std::size_t>(i)].adv.count = {1, 0, 0};
  }
  const auto t = tail_category_advantages(stats, 0.2);
  EXPECT_DOUBLE_EQ(*t[0], 8.5);
  EXPECT_FALSE(t[1]);
}

TEST(Eval, UntrainedIsNearChance) {
  EnvConfig e;
  e.rng_seed = 3;
  const auto samples = generate(e, 300);
  RolloutConfig rc;
  rc.env = e;
  const auto r = evaluate(PolicyParams::init(default_shape(e), 2), samples, rc, 1);
  EXPECT_EQ(r.samples, 300);
  EXPECT_LT(r.accuracy, 0.35);
}
