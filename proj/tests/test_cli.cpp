#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "zoomrl/cli.hpp"

using namespace zoomrl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("zoomrl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    cfg_.env.canvas_size = 32;
    cfg_.env.obs_size = 8;
    cfg_.max_long_side = 32;
    cfg_.gen_n = 60;
    cfg_.gen_heldout = 40;
    cfg_.calibration_n = 10;
    cfg_.mix.shots = 2;
    cfg_.eval_n = 40;
    cfg_.checkpoint_every = 5;
    cfg_.paths.dataset = (dir_ / "data/train.jsonl").string();
    cfg_.paths.heldout = (dir_ / "data/heldout.jsonl").string();
    cfg_.paths.curation = (dir_ / "data/curation.jsonl").string();
    cfg_.paths.checkpoints = (dir_ / "ckpt").string();
    cfg_.paths.metrics = (dir_ / "metrics").string();
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run_cli(const std::string& args) {
    const std::string cmd = "cd '" + dir_.string() + "' && '" ZOOMRL_CLI_PATH "' " + args + " >out.txt 2>err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir_;
  RunConfig cfg_;
  std::ostringstream log_;
};

}  // namespace

TEST(Config, DefaultsMatchDesign) {
  const RunConfig c;
  EXPECT_EQ(c.train.steps, 800);
  EXPECT_EQ(c.train.batch, 4);
  EXPECT_EQ(c.train.group, 3);
  EXPECT_EQ(c.train.lr_peak, 3e-3);
  EXPECT_EQ(c.train.eps_low, 0.2);
  EXPECT_EQ(c.train.eps_high, 0.28);
  EXPECT_EQ(c.reward.gamma, 0.1);
  EXPECT_EQ(c.mix.hard_fraction, 0.8);
  EXPECT_EQ(c.env.obs_size, 16);
  EXPECT_EQ(c.zoom.crop_size, 16);
}

TEST(Config, JsonRoundTripAndPrecedence) {
  RunConfig c;
  c.train.steps = 17;
  c.env.noise_std = 0.05;
  c.zoom.source = ZoomSource::Original;
  c.train.loss_agg = LossAggregation::Sequence;
  RunConfig d;
  apply_json(d, to_json(c));
  EXPECT_EQ(to_json(d), to_json(c));

  apply_override(d, "train.steps", "99");
  apply_override(d, "paths.dataset", "x.jsonl");
  apply_override(d, "zoom.resize_crop", "false");
  apply_override(d, "seed", "5");
  EXPECT_EQ(d.train.steps, 99);
  EXPECT_EQ(d.paths.dataset, "x.jsonl");
  EXPECT_FALSE(d.zoom.resize_crop);
  EXPECT_EQ(d.seed, 5u);
  EXPECT_EQ(d.env.noise_std, 0.05);  // untouched keys keep the file value
}

TEST(Config, RejectsUnknownAndMistyped) {
  RunConfig c;
  EXPECT_THROW(apply_override(c, "train.stepz", "3"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.steps", "\"many\""), ConfigError);
  EXPECT_THROW(apply_override(c, "zoom.source", "sideways"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_F(CliTest, GenIsByteDeterministic) {
  cmd_gen(cfg_, log_);
  const std::string a = slurp(cfg_.paths.dataset);
  cmd_gen(cfg_, log_);
  EXPECT_EQ(slurp(cfg_.paths.dataset), a);
  EXPECT_EQ(lines_of(cfg_.paths.dataset).size(), 60u);
  EXPECT_NE(log_.str().find("GlobalOnly"), std::string::npos);
  // held-out ids do not overlap training ids
  const auto train = load_dataset(cfg_.paths.dataset);
  const auto held = load_dataset(cfg_.paths.heldout);
  EXPECT_EQ(held.front().sample_id, 60);
  cfg_.gen_n = 0;
  EXPECT_THROW(cmd_gen(cfg_, log_), UsageError);
}

TEST_F(CliTest, TrainZeroStepsWritesHeaderOnly) {
  cmd_gen(cfg_, log_);
  cmd_curate(cfg_, std::nullopt, log_);
  cfg_.train.steps = 0;
  const auto out = cmd_train(cfg_, std::nullopt, log_);
  EXPECT_TRUE(out.result.stats.empty());
  const auto jl = lines_of(cfg_.paths.metrics + ".jsonl");
  ASSERT_EQ(jl.size(), 1u);
  const auto header = nlohmann::json::parse(jl[0]);
  EXPECT_EQ(header.at("config"), to_json(cfg_));
  EXPECT_TRUE(header.at("meta").contains("timestamp"));
  EXPECT_EQ(lines_of(cfg_.paths.metrics + ".csv"), std::vector<std::string>{std::string(kCsvHeader)});
}

TEST_F(CliTest, ResumeContinuesTheRun) {
  cmd_gen(cfg_, log_);
  cmd_curate(cfg_, std::nullopt, log_);
  cfg_.train.steps = 20;
  const auto full = cmd_train(cfg_, std::nullopt, log_);
  const auto full_csv = lines_of(cfg_.paths.metrics + ".csv");

  // restart from the full run's step-10 checkpoint with the same horizon
  cfg_.paths.metrics = (dir_ / "resumed").string();
  cfg_.paths.checkpoints = (dir_ / "ckpt2").string();
  const auto resumed = cmd_train(cfg_, (dir_ / "ckpt/step-000010.ckpt").string(), log_);
  ASSERT_EQ(resumed.result.stats.size(), 10u);
  EXPECT_EQ(resumed.result.stats.front().step, 11);
  EXPECT_EQ(resumed.result.params.theta, full.result.params.theta);
  const auto csv = lines_of(cfg_.paths.metrics + ".csv");
  ASSERT_EQ(csv.size(), 11u);
  EXPECT_EQ(csv.back(), full_csv.back());
}

TEST_F(CliTest, ResumeAppendsToExistingMetrics) {
  cmd_gen(cfg_, log_);
  cmd_curate(cfg_, std::nullopt, log_);
  cfg_.train.steps = 10;
  cmd_train(cfg_, std::nullopt, log_);
  cfg_.train.steps = 15;
  cmd_train(cfg_, (dir_ / "ckpt/step-000010.ckpt").string(), log_);
  const auto jl = lines_of(cfg_.paths.metrics + ".jsonl");
  ASSERT_EQ(jl.size(), 1u + 15u);
  EXPECT_EQ(nlohmann::json::parse(jl.back()).at("step"), 15);
}

TEST_F(CliTest, EvalAndMismatch) {
  cmd_gen(cfg_, log_);
  save_checkpoint_file((dir_ / "init.ckpt").string(), initial_policy(cfg_));
  EvalOptions opt;
  opt.checkpoint = (dir_ / "init.ckpt").string();
  opt.out = (dir_ / "report.json").string();
  const auto rep = cmd_eval(cfg_, opt, log_);
  EXPECT_EQ(rep.at("samples"), 40);
  EXPECT_LT(rep.at("accuracy").get<double>(), 0.45);
  EXPECT_TRUE(fs::exists(*opt.out));

  RunConfig other = cfg_;
  other.env.obs_size = 16;
  other.env.canvas_size = 64;
  other.max_long_side = 64;
  EXPECT_THROW(cmd_eval(other, opt, log_), ConfigError);
}

TEST_F(CliTest, InspectShowsBothPaths) {
  cmd_gen(cfg_, log_);
  PolicyParams p = initial_policy(cfg_);
  const ParamLayout L(p.shape);

  p.theta[L.bt] = 50.0;
  save_checkpoint_file((dir_ / "tool.ckpt").string(), p);
  InspectOptions opt;
  opt.checkpoint = (dir_ / "tool.ckpt").string();
  opt.sample_id = 3;
  std::ostringstream out;
  const Trajectory t = cmd_inspect(cfg_, opt, out);
  EXPECT_EQ(t.category, TrajectoryCategory::ToolSuccess);
  for (const char* piece : {"<think>", "<tool>", "<result>", "<answer>", "r_tool 1"})
    EXPECT_NE(out.str().find(piece), std::string::npos) << piece;

  opt.inject_bad_call = true;
  std::ostringstream bad;
  EXPECT_EQ(cmd_inspect(cfg_, opt, bad).category, TrajectoryCategory::ToolFail);
  EXPECT_NE(bad.str().find("r_tool 0"), std::string::npos);
  EXPECT_NE(bad.str().find("ToolFail"), std::string::npos);

  p.theta[L.bt] = -50.0;
  save_checkpoint_file((dir_ / "answer.ckpt").string(), p);
  opt.checkpoint = (dir_ / "answer.ckpt").string();
  opt.inject_bad_call = false;
  std::ostringstream direct;
  const Trajectory n = cmd_inspect(cfg_, opt, direct);
  EXPECT_EQ(n.category, TrajectoryCategory::NoTool);
  int assistant = 0;
  for (const auto& turn : n.transcript.turns) assistant += turn.speaker == Speaker::Assistant;
  EXPECT_EQ(assistant, 1);

  opt.sample_id = 100000;
  EXPECT_THROW(cmd_inspect(cfg_, opt, direct), UsageError);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli("gen --n 0"), 2);
  EXPECT_EQ(run_cli("bogus"), 2);
  EXPECT_EQ(run_cli("gen --train.nope 3"), 2);
  EXPECT_EQ(run_cli("train --config missing.json"), 3);
  EXPECT_EQ(run_cli("train"), 3);  // no dataset yet
  EXPECT_EQ(run_cli("gen --n 30 --heldout-n 10 --env.canvas_size 32 --env.obs_size 8 --rollout.max_long_side 32"), 0);
  EXPECT_EQ(run_cli("curate --env.canvas_size 32 --env.obs_size 8"), 0);
  EXPECT_EQ(run_cli("train --steps 0 --env.canvas_size 32 --env.obs_size 8"), 0);
  EXPECT_EQ(run_cli("train --steps 3 --train.kl_coeff 0.5 --env.canvas_size 32 --env.obs_size 8"), 3);
  EXPECT_EQ(run_cli("eval --checkpoint runs/checkpoints/final.ckpt --env.canvas_size 32 --env.obs_size 8 "
                    "--rollout.max_long_side 32"),
            0);
  EXPECT_EQ(run_cli("eval --checkpoint runs/checkpoints/final.ckpt"), 3);  // feature length mismatch
}

TEST_F(CliTest, ConfigFileThenFlags) {
  std::ofstream(dir_ / "cfg.json") << R"({"train": {"steps": 0}, "gen": {"n": 25, "heldout": 5},
    "env": {"canvas_size": 32, "obs_size": 8}, "rollout": {"max_long_side": 32}, "seed": 3})";
  EXPECT_EQ(run_cli("gen --config cfg.json --n 12"), 0);
  EXPECT_EQ(lines_of(dir_ / "data/train.jsonl").size(), 12u);
  EXPECT_EQ(lines_of(dir_ / "data/heldout.jsonl").size(), 5u);
  EXPECT_EQ(run_cli("curate --config cfg.json"), 0);
  EXPECT_EQ(run_cli("train --config cfg.json --seed 11"), 0);
  const auto header = nlohmann::json::parse(lines_of(dir_ / "runs/metrics.jsonl").at(0));
  EXPECT_EQ(header["config"]["seed"], 11);
  EXPECT_EQ(header["config"]["train"]["steps"], 0);
  EXPECT_EQ(header["config"]["env"]["obs_size"], 8);
}
