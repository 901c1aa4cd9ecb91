#pragma once

#include <compare>
#include <numeric>
#include <string>
#include <vector>

namespace zoomrl {

struct Keypoint {
  int x = 0;  // pixel column
  int y = 0;  // pixel row
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

enum class DecisionKind { Tool, Answer };

// One assistant turn's worth of sampled choices. Each sampled categorical
// (tool flag, keypoint bin, answer) is a "token" with its own log-probability.
struct StructuredDecision {
  DecisionKind kind = DecisionKind::Answer;
  int keypoint_bin = -1;  // Tool only
  Keypoint keypoint;      // bin center in pixels, Tool only
  int answer_idx = -1;    // Answer only
  std::string answer;     // Answer only
  bool tool_flag_sampled = false;  // turn 1 samples the flag; turn 2 is forced
  std::vector<double> token_logprobs;

  double logprob() const {
    return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
  }

  static StructuredDecision tool(Keypoint kp, int bin = -1) {
    StructuredDecision d;
    d.kind = DecisionKind::Tool;
    d.keypoint = kp;
    d.keypoint_bin = bin;
    return d;
  }
  static StructuredDecision answer_with(std::string text, int idx = -1) {
    StructuredDecision d;
    d.kind = DecisionKind::Answer;
    d.answer = std::move(text);
    d.answer_idx = idx;
    return d;
  }
};

}  // namespace zoomrl
