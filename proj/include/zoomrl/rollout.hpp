#pragma once

// Episodes through the conversation protocol: observation, first decision,
// at most one zoom call, answer-only second turn, format check and reward.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <future>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "zoomrl/datamix.hpp"
#include "zoomrl/env.hpp"
#include "zoomrl/policy.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/zoomtool.hpp"

namespace zoomrl {

enum class TrajectoryCategory { NoTool = 0, ToolSuccess = 1, ToolFail = 2 };
inline constexpr int kCategoryCount = 3;

inline std::string_view category_name(TrajectoryCategory c) {
  switch (c) {
    case TrajectoryCategory::NoTool: return "NoTool";
    case TrajectoryCategory::ToolSuccess: return "ToolSuccess";
    case TrajectoryCategory::ToolFail: return "ToolFail";
  }
  return "?";
}

struct RolloutConfig {
  EnvConfig env;
  ZoomConfig zoom;
  RewardWeights reward;
  double temperature = 1.0;
  // Long side of the image the policy is shown; the canvas plays the role of
  // the full-resolution original.
  int max_long_side = 64;
  // Observation resolution override (evaluation sweeps); 0 keeps env.obs_size.
  int obs_override = 0;
  // Probability that a sampled tool call is emitted with an out-of-range
  // keypoint. Test hook and failure-path stress; 1.0 always corrupts.
  double bad_call_rate = 0.0;
};

struct Trajectory {
  int sample_id = 0;
  std::uint64_t seed = 0;
  std::vector<StructuredDecision> decisions;
  std::vector<PolicyInput> inputs;  // aligned with decisions
  Transcript transcript;
  RewardBreakdown reward;
  TrajectoryCategory category = TrajectoryCategory::NoTool;
  int tool_calls_executed = 0;
  bool injected_bad_call = false;
  std::string final_answer;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& d : decisions) n += d.token_logprobs.size();
    return n;
  }
};

struct GroupBatch {
  int group_size = 0;
  std::vector<std::vector<Trajectory>> groups;  // one group per prompt

  std::size_t trajectory_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }
};

inline std::string system_prompt(const ToolRegistry& registry) {
  std::string tools;
  for (const auto& [name, spec] : registry.tools()) tools += name + ": " + spec.description + "\n";
  return "You may call any of the tools exactly one time. You have access to the\n"
         "following tools to help solve problems:\n\n" +
         tools +
         "\nFor each step:\n"
         "1. Start by thinking through your reasoning inside <think> tags. Then\n"
         "either return your answer inside <answer> tags, or use a tool inside\n"
         "<tool> tags.\n"
         "2. If needed, use a tool by writing its arguments inside <tool> tags.\n"
         "Use one line for each argument in the format 'key: value'. The first\n"
         "line must be 'name: <tool_name>'.\n"
         "3. You will see the tool's output inside <result> tags.\n"
         "4. Continue until you can give the final answer inside <answer> tags.\n\n"
         "Tools expect specific arguments. Follow the examples carefully for the\n"
         "required keys and expected value formats.\n"
         "Do not make up tools or arguments that aren't listed.";
}

inline std::string user_prompt(Size image, std::string_view question) {
  return std::string(kImageSlot) + "\nThe image size is " + std::to_string(image.width) + "x" +
         std::to_string(image.height) +
         ".\nPlease thoroughly think through the question and refine your answer while thinking. "
         "You should try to collect the visual evidence you need to support your answer. Then, "
         "provide your answer. The answer (which you will provide in the <answer> </answer> tags) "
         "should be a single word or phrase directly answering the question.\nQuestion: " +
         std::string(question);
}

/// Recomputes the reward from a finished transcript. Tool attempts are the
/// `<tool>` blocks in assistant turns; a call succeeded iff the result turn
/// carries an image.
inline RewardBreakdown score_transcript(const Transcript& t, const AnswerKey& key, const RewardWeights& w) {
  const FormatVerdict verdict = validate_format(t);
  int attempted = 0;
  int succeeded = 0;
  std::string answer;
  for (const auto& turn : t.turns) {
    for (const auto& seg : turn.segments) {
      if (turn.speaker == Speaker::Assistant && seg.kind == SegmentKind::Tool) ++attempted;
      if (turn.speaker == Speaker::Assistant && seg.kind == SegmentKind::Answer) answer = seg.content;
      if (turn.speaker == Speaker::ToolResult && seg.kind == SegmentKind::Result && seg.content == kImageSlot)
        ++succeeded;
    }
  }
  succeeded = std::min(succeeded, attempted);
  return composite_reward(exact_reward(answer, key), edit_reward(answer, key), format_reward(verdict),
                          tool_reward(succeeded, attempted), w);
}

struct EpisodeView {
  EpisodeImages images;
  Raster observation;  // on the policy's grid
  Size tool_image;     // coordinate frame of the keypoint
};

inline EpisodeView episode_view(const SyntheticSample& sample, const RolloutConfig& cfg) {
  EpisodeView v;
  v.images.original = sample.canvas;
  v.images.downsized = downsize_long_side(sample.canvas, cfg.max_long_side);
  v.observation = cfg.obs_override > 0 ? perceive_at_resolution(v.images.downsized, cfg.obs_override, cfg.env)
                                       : perceive(v.images.downsized, cfg.env);
  v.tool_image = cfg.zoom.source == ZoomSource::Original ? v.images.original.size() : v.images.downsized.size();
  return v;
}

inline Trajectory run_episode(const PolicyParams& params, const SyntheticSample& sample, const RolloutConfig& cfg,
                              std::uint64_t seed) {
  static const ToolRegistry registry = default_registry();
  std::mt19937_64 rng(seed);
  const EpisodeView view = episode_view(sample, cfg);

  Trajectory traj;
  traj.sample_id = sample.sample_id;
  traj.seed = seed;
  auto& turns = traj.transcript.turns;
  turns.push_back(parse_turn(system_prompt(registry), Speaker::System));
  turns.push_back(parse_turn(user_prompt(view.tool_image, sample.question), Speaker::User));

  PolicyInput in1 = make_policy_input(view.observation, nullptr, std::nullopt, view.tool_image, false);
  StructuredDecision d1 = act_turn1(params, in1, cfg.temperature, rng, view.tool_image);
  std::string text1 = render_turn(d1);
  if (d1.kind == DecisionKind::Tool && cfg.bad_call_rate > 0.0 &&
      std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.bad_call_rate) {
    StructuredDecision bad = d1;
    bad.keypoint.x += view.tool_image.width;
    text1 = render_turn(bad);
    traj.injected_bad_call = true;
  }
  turns.push_back(parse_turn(text1, Speaker::Assistant));
  traj.decisions.push_back(d1);
  traj.inputs.push_back(std::move(in1));

  if (d1.kind == DecisionKind::Tool) {
    const ToolCall call = parse_tool_call(turns.back().segments.at(1).content, registry);
    const ToolResultPayload result = zoom_tool_adapter(call, view.images, cfg.zoom);
    ++traj.tool_calls_executed;
    turns.push_back(parse_turn(result.result_text, Speaker::ToolResult));

    std::optional<Raster> seen;
    if (result.success) seen = fixate(perceive(*result.crop, cfg.env), cfg.env.glyph_size);
    PolicyInput in2 = make_policy_input(view.observation, seen ? &*seen : nullptr,
                                        result.success ? std::optional<Keypoint>(d1.keypoint) : std::nullopt,
                                        view.tool_image, true);
    StructuredDecision d2 = act_turn2(params, in2, rng, cfg.temperature);
    const std::string text2 = render_turn(d2);
    if (!constrain_second_turn(std::string_view(text2).substr(std::string_view("<think>").size())))
      throw std::logic_error("second turn escaped the answer-only grammar");
    turns.push_back(parse_turn(text2, Speaker::Assistant));
    traj.decisions.push_back(d2);
    traj.inputs.push_back(std::move(in2));
    traj.category = result.success ? TrajectoryCategory::ToolSuccess : TrajectoryCategory::ToolFail;
    traj.final_answer = d2.answer;
  } else {
    traj.category = TrajectoryCategory::NoTool;
    traj.final_answer = d1.answer;
  }
  if (traj.tool_calls_executed > 1) throw std::logic_error("tool budget exceeded");
  traj.reward = score_transcript(traj.transcript, sample.answer_key, cfg.reward);
  return traj;
}

inline std::vector<Trajectory> sample_group(const PolicyParams& params, const SyntheticSample& sample, int group_size,
                                            std::uint64_t base_seed, const RolloutConfig& cfg) {
  if (group_size < 2) throw ConfigError("sample_group: group size must be >= 2");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(group_size));
  for (int i = 0; i < group_size; ++i)
    out.push_back(run_episode(params, sample, cfg, base_seed + static_cast<std::uint64_t>(i)));
  return out;
}

/// Worker count for rollouts: ZOOMRL_THREADS if set, else hardware concurrency.
inline unsigned rollout_threads() {
  if (const char* env = std::getenv("ZOOMRL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Results are
/// written by index, so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  const std::size_t workers = std::min<std::size_t>(threads, n);
  for (std::size_t w = 0; w < workers; ++w)
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    }));
  for (auto& j : jobs) j.get();
}

class Dataset {
 public:
  explicit Dataset(std::vector<SyntheticSample> samples) : samples_(std::move(samples)) {
    for (std::size_t i = 0; i < samples_.size(); ++i) index_[samples_[i].sample_id] = i;
    if (index_.size() != samples_.size()) throw ConfigError("dataset: duplicate sample ids");
  }
  const std::vector<SyntheticSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const SyntheticSample& by_id(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("unknown sample_id " + std::to_string(id));
    return samples_[it->second];
  }
  bool contains(int id) const { return index_.count(id) != 0; }

 private:
  std::vector<SyntheticSample> samples_;
  std::unordered_map<int, std::size_t> index_;
};

/// Draws `batch` distinct prompts through the weighting and samples a group for each.
inline GroupBatch collect_batch(const PolicyParams& params, const Dataset& dataset, const DatasetWeighting& weighting,
                                int batch, int group_size, std::uint64_t step_seed, const RolloutConfig& cfg,
                                unsigned threads = 1) {
  if (dataset.empty() || weighting.population() == 0) throw ConfigError("collect_batch: empty dataset");
  if (batch < 1) throw ConfigError("collect_batch: batch must be >= 1");
  std::mt19937_64 rng(mix_seed(step_seed, 0xB47Cull));
  std::vector<int> ids;
  std::unordered_set<int> seen;
  const std::size_t distinct = std::min<std::size_t>(static_cast<std::size_t>(batch), weighting.population());
  int guard = 0;
  while (ids.size() < static_cast<std::size_t>(batch)) {
    const int id = weighting.draw(rng);
    // without replacement while enough distinct samples remain
    if (seen.size() < distinct && seen.count(id) && ++guard < 100000) continue;
    seen.insert(id);
    ids.push_back(id);
  }
  GroupBatch out;
  out.group_size = group_size;
  out.groups.resize(ids.size());
  parallel_for(ids.size(), threads, [&](std::size_t g) {
    out.groups[g] = sample_group(params, dataset.by_id(ids[g]), group_size,
                                 mix_seed(step_seed, 1000 + static_cast<std::uint64_t>(g)), cfg);
  });
  return out;
}

}  // namespace zoomrl
