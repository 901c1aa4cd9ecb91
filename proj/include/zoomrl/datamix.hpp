#pragma once

// Difficulty scoring by k-shot answering and a two-stage (bucket, then
// uniform within bucket) training sampler that over-represents hard samples.

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "zoomrl/env.hpp"
#include "zoomrl/errors.hpp"
#include "zoomrl/policy.hpp"
#include "zoomrl/reward.hpp"

namespace zoomrl {

enum class Bucket { Hard, Easy };

struct CurationRecord {
  int sample_id = 0;
  int shots = 0;
  std::vector<double> scores;
  double mean_score = 0.0;
  Bucket bucket = Bucket::Hard;
};

struct MixPolicy {
  double hard_fraction = 0.8;
  double threshold = 0.5;
  int shots = 8;
  double eval_temperature = 1.0;

  void validate() const {
    if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) throw ConfigError("mix.hard_fraction must lie in [0,1]");
    if (shots < 1) throw ConfigError("mix.shots must be >= 1");
    if (!std::isfinite(threshold)) throw ConfigError("mix.threshold must be finite");
  }
};

inline Bucket bucket_for(double mean_score, double threshold) {
  return mean_score < threshold ? Bucket::Hard : Bucket::Easy;
}

/// Produces one answer per shot; `rng` is seeded per shot.
using Answerer = std::function<std::string(const SyntheticSample&, std::mt19937_64&)>;

inline CurationRecord score_with(const Answerer& answer, const SyntheticSample& sample, int shots, std::uint64_t seed,
                                 double threshold = 0.5) {
  if (shots < 1) throw ConfigError("score_sample: shots must be >= 1");
  CurationRecord r;
  r.sample_id = sample.sample_id;
  r.shots = shots;
  for (int i = 0; i < shots; ++i) {
    std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(sample.sample_id)), static_cast<std::uint64_t>(i)));
    r.scores.push_back(vqa_score(answer(sample, rng), sample.answer_key.references));
  }
  r.mean_score = std::accumulate(r.scores.begin(), r.scores.end(), 0.0) / shots;
  r.bucket = bucket_for(r.mean_score, threshold);
  return r;
}

/// Tool-free answering with the policy's answer head, as a base model would
/// answer directly from the observation.
inline Answerer policy_answerer(const PolicyParams& params, const EnvConfig& env, double temperature) {
  return [&params, env, temperature](const SyntheticSample& s, std::mt19937_64& rng) {
    const Raster obs = observe(s, env);
    const PolicyInput in = make_policy_input(obs, nullptr, std::nullopt, s.canvas.size(), false);
    const Forward f = forward(params, in);
    const auto lp = log_softmax(f.ans_logits, temperature);
    const auto idx = temperature <= 0.0 ? argmax(f.ans_logits) : sample_categorical(lp, rng);
    return answer_text(static_cast<int>(idx), params.shape.answer_options - 1);
  };
}

inline CurationRecord score_sample(const PolicyParams& params, const SyntheticSample& sample, int shots,
                                   double temperature, std::uint64_t seed, const EnvConfig& env,
                                   double threshold = 0.5) {
  return score_with(policy_answerer(params, env, temperature), sample, shots, seed, threshold);
}

/// Sampling weights over a dataset: Hard with probability hard_fraction, else
/// Easy, uniform within the bucket.
struct DatasetWeighting {
  std::vector<int> hard_ids;
  std::vector<int> easy_ids;
  double hard_fraction = 0.8;
  std::string warning;

  int draw(std::mt19937_64& rng) const {
    const bool hard = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < hard_fraction;
    const auto& pool = hard ? hard_ids : easy_ids;
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  }

  std::size_t population() const { return hard_ids.size() + easy_ids.size(); }

  /// Probability mass of one sample id.
  double weight_of(int sample_id) const {
    for (int id : hard_ids)
      if (id == sample_id) return hard_fraction / static_cast<double>(hard_ids.size());
    for (int id : easy_ids)
      if (id == sample_id) return (1.0 - hard_fraction) / static_cast<double>(easy_ids.size());
    return 0.0;
  }
};

inline DatasetWeighting curate(const std::vector<CurationRecord>& records, const MixPolicy& policy) {
  policy.validate();
  if (records.empty()) throw ConfigError("curate: no records");
  DatasetWeighting w;
  for (const auto& r : records)
    (bucket_for(r.mean_score, policy.threshold) == Bucket::Hard ? w.hard_ids : w.easy_ids).push_back(r.sample_id);
  w.hard_fraction = policy.hard_fraction;
  if (w.hard_ids.empty()) {
    w.hard_fraction = 0.0;
    w.warning = "curation: Hard bucket is empty; all draws come from Easy";
  } else if (w.easy_ids.empty()) {
    w.hard_fraction = 1.0;
    if (policy.hard_fraction < 1.0) w.warning = "curation: Easy bucket is empty; all draws come from Hard";
  }
  return w;
}

inline DatasetWeighting uniform_weighting(const std::vector<SyntheticSample>& samples) {
  DatasetWeighting w;
  for (const auto& s : samples) w.hard_ids.push_back(s.sample_id);
  w.hard_fraction = 1.0;
  return w;
}

inline nlohmann::json record_to_json(const CurationRecord& r) {
  return {{"sample_id", r.sample_id},
          {"shots", r.shots},
          {"scores", r.scores},
          {"mean_score", r.mean_score},
          {"bucket", r.bucket == Bucket::Hard ? "Hard" : "Easy"}};
}

inline CurationRecord record_from_json(const nlohmann::json& j) {
  CurationRecord r;
  r.sample_id = j.at("sample_id").get<int>();
  r.shots = j.at("shots").get<int>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.mean_score = j.at("mean_score").get<double>();
  const auto b = j.at("bucket").get<std::string>();
  if (b != "Hard" && b != "Easy") throw ConfigError("curation: unknown bucket '" + b + "'");
  r.bucket = b == "Hard" ? Bucket::Hard : Bucket::Easy;
  return r;
}

inline void write_curation(std::ostream& os, const std::vector<CurationRecord>& records) {
  for (const auto& r : records) os << record_to_json(r).dump() << '\n';
}

inline std::vector<CurationRecord> read_curation(std::istream& is) {
  std::vector<CurationRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("curation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace zoomrl
