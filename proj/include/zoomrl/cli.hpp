#pragma once

// Run configuration, dotted overrides, metrics files and the command bodies
// behind tools/zoomrl. Kept in the library so tests can drive commands
// without spawning processes.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "zoomrl/datamix.hpp"
#include "zoomrl/env.hpp"
#include "zoomrl/errors.hpp"
#include "zoomrl/grpo.hpp"
#include "zoomrl/policy.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/rollout.hpp"

namespace zoomrl {

/// Thrown for malformed command lines (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitConfig = 3, kExitNumerical = 4 };

struct RunPaths {
  std::string dataset = "data/train.jsonl";
  std::string heldout = "data/heldout.jsonl";
  std::string curation = "data/curation.jsonl";
  std::string checkpoints = "runs/checkpoints";
  std::string metrics = "runs/metrics";  // stem: .jsonl and .csv are appended
};

struct RunConfig {
  EnvConfig env;
  TrainConfig train;
  RewardWeights reward;
  MixPolicy mix;
  ZoomConfig zoom;
  RunPaths paths;
  std::uint64_t seed = 7;
  // generation
  int gen_n = 2000;
  int gen_heldout = 500;
  int calibration_n = 200;
  // rollout knobs
  double temperature = 1.0;
  int max_long_side = 64;
  double bad_call_rate = 0.0;
  int checkpoint_every = 500;
  int eval_n = 500;

  RolloutConfig rollout() const {
    RolloutConfig r;
    r.env = env;
    r.env.rng_seed = seed;
    r.zoom = zoom;
    r.reward = reward;
    r.temperature = temperature;
    r.max_long_side = max_long_side;
    r.bad_call_rate = bad_call_rate;
    return r;
  }

  void validate() const {
    env.validate(zoom.crop_size);
    train.validate();
    reward.validate();
    mix.validate();
    if (zoom.crop_size < 1) throw ConfigError("zoom.crop_size must be >= 1");
    if (max_long_side < 1) throw ConfigError("rollout.max_long_side must be >= 1");
    if (!(bad_call_rate >= 0.0 && bad_call_rate <= 1.0)) throw ConfigError("rollout.bad_call_rate must be in [0,1]");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  return json{
      {"env",
       {{"canvas_size", c.env.canvas_size},
        {"obs_size", c.env.obs_size},
        {"glyph_size", c.env.glyph_size},
        {"alphabet_size", c.env.alphabet_size},
        {"noise_std", c.env.noise_std},
        {"easy_fraction", c.env.easy_fraction}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"group", c.train.group},
        {"lr_peak", c.train.lr_peak},
        {"warmup_steps", c.train.warmup_steps},
        {"adam_beta1", c.train.adam_beta1},
        {"adam_beta2", c.train.adam_beta2},
        {"adam_eps", c.train.adam_eps},
        {"eps_low", c.train.eps_low},
        {"eps_high", c.train.eps_high},
        {"max_grad_norm", c.train.max_grad_norm},
        {"kl_coeff", c.train.kl_coeff},
        {"loss_agg", c.train.loss_agg == LossAggregation::Token ? "token" : "sequence"},
        {"inner_epochs", c.train.inner_epochs},
        {"checkpoint_every", c.checkpoint_every}}},
      {"reward", {{"alpha", c.reward.alpha}, {"beta", c.reward.beta}, {"gamma", c.reward.gamma}, {"lambda", c.reward.lambda}}},
      {"mix",
       {{"hard_fraction", c.mix.hard_fraction},
        {"threshold", c.mix.threshold},
        {"shots", c.mix.shots},
        {"eval_temperature", c.mix.eval_temperature}}},
      {"zoom",
       {{"crop_size", c.zoom.crop_size},
        {"source", c.zoom.source == ZoomSource::Downsized ? "downsized" : "original"},
        {"resize_crop", c.zoom.resize_crop}}},
      {"rollout",
       {{"temperature", c.temperature}, {"max_long_side", c.max_long_side}, {"bad_call_rate", c.bad_call_rate}}},
      {"gen", {{"n", c.gen_n}, {"heldout", c.gen_heldout}, {"calibration_n", c.calibration_n}}},
      {"eval", {{"n", c.eval_n}}},
      {"paths",
       {{"dataset", c.paths.dataset},
        {"heldout", c.paths.heldout},
        {"curation", c.paths.curation},
        {"checkpoints", c.paths.checkpoints},
        {"metrics", c.paths.metrics}}},
      {"seed", c.seed}};
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("config: unknown key '" + where + (where.empty() ? "" : ".") + it.key() + "'");
    if (it.value().is_object() && known.at(it.key()).is_object())
      reject_unknown(it.value(), known.at(it.key()), where.empty() ? it.key() : where + "." + it.key());
  }
}

}  // namespace detail

/// Fills `c` from JSON; keys that are absent keep their current value.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  using detail::read_key;
  detail::reject_unknown(j, to_json(c), "");
  if (j.contains("env")) {
    const auto& e = j["env"];
    read_key(e, "canvas_size", c.env.canvas_size, "env");
    read_key(e, "obs_size", c.env.obs_size, "env");
    read_key(e, "glyph_size", c.env.glyph_size, "env");
    read_key(e, "alphabet_size", c.env.alphabet_size, "env");
    read_key(e, "noise_std", c.env.noise_std, "env");
    read_key(e, "easy_fraction", c.env.easy_fraction, "env");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    read_key(t, "steps", c.train.steps, "train");
    read_key(t, "batch", c.train.batch, "train");
    read_key(t, "group", c.train.group, "train");
    read_key(t, "lr_peak", c.train.lr_peak, "train");
    read_key(t, "warmup_steps", c.train.warmup_steps, "train");
    read_key(t, "adam_beta1", c.train.adam_beta1, "train");
    read_key(t, "adam_beta2", c.train.adam_beta2, "train");
    read_key(t, "adam_eps", c.train.adam_eps, "train");
    read_key(t, "eps_low", c.train.eps_low, "train");
    read_key(t, "eps_high", c.train.eps_high, "train");
    read_key(t, "max_grad_norm", c.train.max_grad_norm, "train");
    read_key(t, "kl_coeff", c.train.kl_coeff, "train");
    read_key(t, "inner_epochs", c.train.inner_epochs, "train");
    read_key(t, "checkpoint_every", c.checkpoint_every, "train");
    if (t.contains("loss_agg")) {
      std::string agg;
      read_key(t, "loss_agg", agg, "train");
      if (agg == "token") c.train.loss_agg = LossAggregation::Token;
      else if (agg == "sequence") c.train.loss_agg = LossAggregation::Sequence;
      else throw ConfigError("config: train.loss_agg must be 'token' or 'sequence'");
    }
  }
  if (j.contains("reward")) {
    const auto& r = j["reward"];
    read_key(r, "alpha", c.reward.alpha, "reward");
    read_key(r, "beta", c.reward.beta, "reward");
    read_key(r, "gamma", c.reward.gamma, "reward");
    read_key(r, "lambda", c.reward.lambda, "reward");
  }
  if (j.contains("mix")) {
    const auto& m = j["mix"];
    read_key(m, "hard_fraction", c.mix.hard_fraction, "mix");
    read_key(m, "threshold", c.mix.threshold, "mix");
    read_key(m, "shots", c.mix.shots, "mix");
    read_key(m, "eval_temperature", c.mix.eval_temperature, "mix");
  }
  if (j.contains("zoom")) {
    const auto& z = j["zoom"];
    read_key(z, "crop_size", c.zoom.crop_size, "zoom");
    read_key(z, "resize_crop", c.zoom.resize_crop, "zoom");
    if (z.contains("source")) {
      std::string src;
      read_key(z, "source", src, "zoom");
      if (src == "downsized") c.zoom.source = ZoomSource::Downsized;
      else if (src == "original") c.zoom.source = ZoomSource::Original;
      else throw ConfigError("config: zoom.source must be 'downsized' or 'original'");
    }
  }
  if (j.contains("rollout")) {
    const auto& r = j["rollout"];
    read_key(r, "temperature", c.temperature, "rollout");
    read_key(r, "max_long_side", c.max_long_side, "rollout");
    read_key(r, "bad_call_rate", c.bad_call_rate, "rollout");
  }
  if (j.contains("gen")) {
    const auto& g = j["gen"];
    read_key(g, "n", c.gen_n, "gen");
    read_key(g, "heldout", c.gen_heldout, "gen");
    read_key(g, "calibration_n", c.calibration_n, "gen");
  }
  if (j.contains("eval")) read_key(j["eval"], "n", c.eval_n, "eval");
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    read_key(p, "dataset", c.paths.dataset, "paths");
    read_key(p, "heldout", c.paths.heldout, "paths");
    read_key(p, "curation", c.paths.curation, "paths");
    read_key(p, "checkpoints", c.paths.checkpoints, "paths");
    read_key(p, "metrics", c.paths.metrics, "paths");
  }
  detail::read_key(j, "seed", c.seed, "");
}

/// Applies `section.key=value` to `c`. The value is parsed as JSON when
/// possible, otherwise taken as a string.
inline void apply_override(RunConfig& c, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    v = value;
  }
  nlohmann::json patch;
  if (dot == std::string::npos) patch[dotted] = v;
  else patch[dotted.substr(0, dot)][dotted.substr(dot + 1)] = v;
  apply_json(c, patch);
}

inline RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    apply_json(c, nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Files.

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline std::vector<SyntheticSample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  auto samples = read_dataset(in);
  if (samples.empty()) throw ConfigError("dataset '" + path + "' is empty");
  return samples;
}

inline PolicyParams load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  try {
    return load_checkpoint(in);
  } catch (const IoError& e) {
    throw ConfigError("checkpoint '" + path + "': " + e.what());
  }
}

inline void save_checkpoint_file(const std::string& path, const PolicyParams& p) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  save_checkpoint(out, p);
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json step_to_json(const StepStats& s) {
  nlohmann::json adv, counts, cum;
  for (int c = 0; c < kCategoryCount; ++c) {
    const std::string name(category_name(static_cast<TrajectoryCategory>(c)));
    adv[name] = optional_json(s.adv.mean[static_cast<std::size_t>(c)]);
    counts[name] = s.adv.count[static_cast<std::size_t>(c)];
    cum[name] = s.cumulative_adv[static_cast<std::size_t>(c)];
  }
  return {{"step", s.step},
          {"mean_reward", s.mean_reward},
          {"r_answer", s.r_answer},
          {"r_edit", s.r_edit},
          {"r_correct", s.r_correct},
          {"r_format", s.r_format},
          {"r_tool", s.r_tool},
          {"adv_mean", adv},
          {"adv_count", counts},
          {"adv_cumulative", cum},
          {"tool_use_rate", s.tool_use_rate},
          {"accuracy", s.accuracy},
          {"loss", s.loss},
          {"clip_fraction", s.clip_fraction},
          {"grad_norm_preclip", s.grad_norm_preclip},
          {"lr", s.lr}};
}

inline std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

inline std::string step_to_csv(const StepStats& s) {
  std::ostringstream os;
  os << std::setprecision(17) << s.step << ',' << s.mean_reward << ',' << csv_cell(s.adv.mean[0]) << ','
     << csv_cell(s.adv.mean[1]) << ',' << csv_cell(s.adv.mean[2]) << ',' << s.tool_use_rate << ',' << s.accuracy
     << ',' << s.lr;
  return os.str();
}

inline constexpr std::string_view kCsvHeader = "step,reward,adv_no_tool,adv_tool_success,adv_tool_fail,tool_use_rate,accuracy,lr";

/// Metrics JSON Lines plus the companion CSV. A fresh file starts with a
/// header line holding the effective config; only `meta` varies between
/// identical runs.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& stem, const RunConfig& cfg, bool append) {
    ensure_parent(stem + ".jsonl");
    const bool fresh = !append || !std::filesystem::exists(stem + ".jsonl");
    jsonl_.open(stem + ".jsonl", fresh ? std::ios::trunc : std::ios::app);
    csv_.open(stem + ".csv", fresh ? std::ios::trunc : std::ios::app);
    if (!jsonl_ || !csv_) throw ConfigError("cannot write metrics at '" + stem + "'");
    if (fresh) {
      jsonl_ << nlohmann::json{{"config", to_json(cfg)}, {"meta", {{"timestamp", utc_timestamp()}}}}.dump() << '\n';
      csv_ << kCsvHeader << '\n';
    }
  }
  void write(const StepStats& s) {
    jsonl_ << step_to_json(s).dump() << '\n';
    csv_ << step_to_csv(s) << '\n';
    jsonl_.flush();
    csv_.flush();
  }

 private:
  std::ofstream jsonl_;
  std::ofstream csv_;
};

// ---------------------------------------------------------------------------
// Commands. Each writes human-readable progress to `log`.

struct GenResult {
  std::size_t requires_zoom = 0;
  std::size_t solvable = 0;
  std::optional<double> global_only;
  std::optional<double> zoom_at_truth;
};

inline GenResult cmd_gen(const RunConfig& cfg, std::ostream& log) {
  if (cfg.gen_n < 1) throw UsageError("gen: --n must be >= 1");
  if (cfg.gen_heldout < 0) throw UsageError("gen: --heldout-n must be >= 0");
  cfg.validate();
  EnvConfig env = cfg.env;
  env.rng_seed = cfg.seed;
  GenResult r;
  const auto train = generate(env, cfg.gen_n, 0);
  auto write = [](const std::string& path, const std::vector<SyntheticSample>& s) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write dataset '" + path + "'");
    write_dataset(out, s);
  };
  write(cfg.paths.dataset, train);
  if (cfg.gen_heldout > 0) write(cfg.paths.heldout, generate(env, cfg.gen_heldout, cfg.gen_n));
  std::vector<SyntheticSample> hard;
  for (const auto& s : train) {
    if (s.difficulty == Difficulty::RequiresZoom) {
      ++r.requires_zoom;
      if (static_cast<int>(hard.size()) < cfg.calibration_n) hard.push_back(s);
    } else {
      ++r.solvable;
    }
  }
  log << "wrote " << train.size() << " samples to " << cfg.paths.dataset << " (RequiresZoom " << r.requires_zoom
      << ", SolvableWithoutZoom " << r.solvable << ")\n";
  if (cfg.gen_heldout > 0) log << "wrote " << cfg.gen_heldout << " held-out samples to " << cfg.paths.heldout << "\n";
  if (!hard.empty()) {
    r.global_only = oracle_answer_rate(hard, OracleDecoder::GlobalOnly, env, cfg.zoom);
    r.zoom_at_truth = oracle_answer_rate(hard, OracleDecoder::ZoomAtTruth, env, cfg.zoom);
    log << std::fixed << std::setprecision(3) << "calibration on " << hard.size()
        << " RequiresZoom samples: GlobalOnly " << *r.global_only << ", ZoomAtTruth " << *r.zoom_at_truth
        << " (chance " << 1.0 / env.alphabet_size << ")\n"
        << std::defaultfloat;
  }
  return r;
}

inline PolicyParams initial_policy(const RunConfig& cfg) {
  return PolicyParams::init(default_shape(cfg.env), mix_seed(cfg.seed, 0x1417ull));
}

inline std::vector<CurationRecord> cmd_curate(const RunConfig& cfg, const std::optional<std::string>& checkpoint,
                                              std::ostream& log) {
  cfg.validate();
  const auto samples = load_dataset(cfg.paths.dataset);
  const PolicyParams params = checkpoint ? load_checkpoint_file(*checkpoint) : initial_policy(cfg);
  if (params.shape.input_dim != feature_dim(cfg.env))
    throw ConfigError("curate: checkpoint expects " + std::to_string(params.shape.input_dim) +
                      " features, config produces " + std::to_string(feature_dim(cfg.env)));
  std::vector<CurationRecord> records(samples.size());
  const auto answer = policy_answerer(params, cfg.env, cfg.mix.eval_temperature);
  parallel_for(samples.size(), rollout_threads(), [&](std::size_t i) {
    records[i] = score_with(answer, samples[i], cfg.mix.shots, mix_seed(cfg.seed, 0xC0DEull), cfg.mix.threshold);
  });
  ensure_parent(cfg.paths.curation);
  std::ofstream out(cfg.paths.curation);
  if (!out) throw ConfigError("cannot write curation file '" + cfg.paths.curation + "'");
  write_curation(out, records);
  const DatasetWeighting w = curate(records, cfg.mix);
  log << "curated " << records.size() << " samples: Hard " << w.hard_ids.size() << ", Easy " << w.easy_ids.size()
      << ", effective hard_fraction " << w.hard_fraction << "\n";
  if (!w.warning.empty()) log << "warning: " << w.warning << "\n";
  return records;
}

struct TrainOutcome {
  TrainResult result;
  std::array<std::optional<double>, kCategoryCount> tail{};
  std::array<int, kCategoryCount> tail_counts{};
  std::string final_checkpoint;
};

inline TrainOutcome cmd_train(const RunConfig& cfg, const std::optional<std::string>& resume, std::ostream& log) {
  cfg.validate();
  const Dataset dataset(load_dataset(cfg.paths.dataset));
  std::ifstream cin(cfg.paths.curation);
  if (!cin) throw ConfigError("cannot open curation file '" + cfg.paths.curation + "' (run curate first)");
  const auto records = read_curation(cin);
  for (const auto& r : records)
    if (!dataset.contains(r.sample_id)) throw ConfigError("curation references unknown sample " + std::to_string(r.sample_id));
  const DatasetWeighting weighting = curate(records, cfg.mix);
  if (!weighting.warning.empty()) log << "warning: " << weighting.warning << "\n";

  PolicyParams params = resume ? load_checkpoint_file(*resume) : initial_policy(cfg);
  if (params.shape.input_dim != feature_dim(cfg.env))
    throw ConfigError("train: checkpoint feature length does not match the config");

  MetricsWriter metrics(cfg.paths.metrics, cfg, resume.has_value());
  TrainSetup setup;
  setup.train = cfg.train;
  setup.rollout = cfg.rollout();
  setup.threads = rollout_threads();
  const auto ckpt_dir = std::filesystem::path(cfg.paths.checkpoints);
  setup.on_step = [&](const StepStats& s, const PolicyParams& p) {
    metrics.write(s);
    if (cfg.checkpoint_every > 0 && s.step % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "step-" << std::setw(6) << std::setfill('0') << s.step << ".ckpt";
      save_checkpoint_file((ckpt_dir / name.str()).string(), p);
    }
    if (s.step % 100 == 0)
      log << "step " << s.step << " reward " << s.mean_reward << " accuracy " << s.accuracy << " tool_use "
          << s.tool_use_rate << "\n";
  };
  TrainOutcome out;
  out.result = train(dataset, weighting, std::move(params), setup, mix_seed(cfg.seed, 0x7EA1ull));
  out.final_checkpoint = (ckpt_dir / "final.ckpt").string();
  save_checkpoint_file(out.final_checkpoint, out.result.params);
  out.tail = tail_category_advantages(out.result.stats, 0.2);
  const std::size_t n = out.result.stats.size();
  const std::size_t tail = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * 0.2));
  for (std::size_t i = n - std::min(n, tail); i < n; ++i)
    for (int c = 0; c < kCategoryCount; ++c) out.tail_counts[c] += out.result.stats[i].adv.count[c];
  log << "final 20% mean advantage:";
  for (int c = 0; c < kCategoryCount; ++c) {
    log << ' ' << category_name(static_cast<TrajectoryCategory>(c)) << '=';
    if (out.tail[static_cast<std::size_t>(c)]) log << *out.tail[static_cast<std::size_t>(c)];
    else log << "n/a";
    log << " (n=" << out.tail_counts[static_cast<std::size_t>(c)] << ')';
  }
  log << "\n";
  return out;
}

struct EvalOptions {
  std::string checkpoint;
  std::optional<std::string> dataset;  // defaults to paths.heldout
  int obs_size = 0;                    // 0 keeps env.obs_size
  bool no_crop_resize = false;
  std::optional<std::string> out;      // JSON report file
};

inline nlohmann::json cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log) {
  cfg.validate();
  const PolicyParams params = load_checkpoint_file(opt.checkpoint);
  if (params.shape.input_dim != feature_dim(cfg.env))
    throw ConfigError("eval: checkpoint expects " + std::to_string(params.shape.input_dim) +
                      " features, config produces " + std::to_string(feature_dim(cfg.env)));
  auto samples = load_dataset(opt.dataset.value_or(cfg.paths.heldout));
  if (cfg.eval_n > 0 && static_cast<int>(samples.size()) > cfg.eval_n) samples.resize(static_cast<std::size_t>(cfg.eval_n));
  RolloutConfig rc = cfg.rollout();
  if (opt.obs_size < 0) throw UsageError("eval: --obs-size must be >= 1");
  if (opt.obs_size > 0) rc.obs_override = opt.obs_size;
  if (opt.no_crop_resize) rc.zoom.resize_crop = false;
  const EvalReport r = evaluate(params, samples, rc, mix_seed(cfg.seed, 0xE7A1ull), rollout_threads());
  const nlohmann::json report{{"samples", r.samples},
                              {"accuracy", r.accuracy},
                              {"tool_use_rate", r.tool_use_rate},
                              {"tool_success_rate", r.tool_success_rate},
                              {"obs_size", opt.obs_size > 0 ? opt.obs_size : cfg.env.obs_size},
                              {"crop_resize", !opt.no_crop_resize},
                              {"checkpoint_version", params.version}};
  if (opt.out) {
    ensure_parent(*opt.out);
    std::ofstream f(*opt.out);
    if (!f) throw ConfigError("cannot write eval report '" + *opt.out + "'");
    f << nlohmann::json{{"config", to_json(cfg)}, {"report", report}, {"meta", {{"timestamp", utc_timestamp()}}}}.dump()
      << '\n';
  }
  log << report.dump() << "\n";
  return report;
}

struct InspectOptions {
  std::optional<std::string> checkpoint;
  int sample_id = 0;
  std::optional<std::string> dataset;
  bool inject_bad_call = false;
};

inline Trajectory cmd_inspect(const RunConfig& cfg, const InspectOptions& opt, std::ostream& out) {
  cfg.validate();
  const PolicyParams params = opt.checkpoint ? load_checkpoint_file(*opt.checkpoint) : initial_policy(cfg);
  const Dataset ds(load_dataset(opt.dataset.value_or(cfg.paths.dataset)));
  if (!ds.contains(opt.sample_id)) throw UsageError("inspect: unknown sample_id " + std::to_string(opt.sample_id));
  const SyntheticSample& s = ds.by_id(opt.sample_id);
  RolloutConfig rc = cfg.rollout();
  rc.temperature = 0.0;
  if (opt.inject_bad_call) rc.bad_call_rate = 1.0;
  const Trajectory t = run_episode(params, s, rc, mix_seed(cfg.seed, static_cast<std::uint64_t>(s.sample_id)));
  out << serialize_transcript(t.transcript);
  out << "--- decisions ---\n";
  for (const auto& d : t.decisions) {
    if (d.kind == DecisionKind::Tool)
      out << "tool keypoint=(" << d.keypoint.x << "," << d.keypoint.y << ") bin=" << d.keypoint_bin;
    else
      out << "answer '" << d.answer << "'";
    out << " logprob=" << d.logprob() << "\n";
  }
  out << "--- reward ---\n"
      << "category " << category_name(t.category) << (t.injected_bad_call ? " (injected bad call)" : "") << "\n"
      << "truth " << symbol_name(s.glyph_symbol) << " at (" << s.glyph_center.x << "," << s.glyph_center.y << ")\n"
      << "r_answer " << t.reward.r_answer << " r_edit " << t.reward.r_edit << " r_correct " << t.reward.r_correct
      << " r_format " << t.reward.r_format << " r_tool " << t.reward.r_tool << " total " << t.reward.total << "\n";
  return t;
}

}  // namespace zoomrl
