#pragma once

// Conversation tag grammar, the line-oriented tool-call codec, the format
// validator and the second-turn decoding constraint.

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zoomrl/decision.hpp"

namespace zoomrl {

enum class SegmentKind { Think, Tool, Result, Answer, Untagged };
enum class Speaker { System, User, Assistant, ToolResult };

struct TagSegment {
  SegmentKind kind = SegmentKind::Untagged;
  std::string content;
  std::size_t begin = 0;  // byte span in the turn's raw text, markers included
  std::size_t end = 0;
  friend bool operator==(const TagSegment&, const TagSegment&) = default;
};

struct Turn {
  Speaker speaker = Speaker::Assistant;
  std::vector<TagSegment> segments;
  std::string raw;
};

struct Transcript {
  std::vector<Turn> turns;
};

enum class ToolCallStatus { ParsedValid, ParseError, UnknownTool, BadArgs };

struct ToolCall {
  std::string name;
  std::vector<std::pair<std::string, std::string>> args;  // in source order, `name` excluded
  ToolCallStatus status = ToolCallStatus::ParseError;

  const std::string* arg(std::string_view key) const {
    for (const auto& [k, v] : args)
      if (k == key) return &v;
    return nullptr;
  }
};

struct FormatVerdict {
  bool turn1_ok = false;
  bool turn2_ok = false;
  bool answer_present = false;
  std::vector<std::string> violations;

  bool ok() const { return turn1_ok && turn2_ok && answer_present; }
};

struct ToolArgSpec {
  std::string name;
  bool required = true;
  std::function<bool(std::string_view)> well_typed;
};

struct ToolSpec {
  std::string name;
  std::string description;
  std::vector<ToolArgSpec> args;
};

class ToolRegistry {
 public:
  void add(ToolSpec spec) { tools_[spec.name] = std::move(spec); }
  const ToolSpec* find(std::string_view name) const {
    auto it = tools_.find(std::string(name));
    return it == tools_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, ToolSpec>& tools() const { return tools_; }

 private:
  std::map<std::string, ToolSpec> tools_;
};

inline constexpr std::string_view kThinkPlaceholder = "reasoning";
inline constexpr std::string_view kImageSlot = "<image>";

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline std::pair<std::size_t, std::size_t> trimmed_range(std::string_view s, std::size_t b,
                                                         std::size_t e) {
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return {b, e};
}

inline std::string trim(std::string_view s) {
  auto [b, e] = trimmed_range(s, 0, s.size());
  return std::string(s.substr(b, e - b));
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  if (!alpha(s[0])) return false;
  return std::all_of(s.begin() + 1, s.end(),
                     [&](char c) { return alpha(c) || (c >= '0' && c <= '9'); });
}

struct TagName {
  SegmentKind kind;
  std::string_view open;
  std::string_view close;
};

inline constexpr std::array<TagName, 4> kTags{{
    {SegmentKind::Think, "<think>", "</think>"},
    {SegmentKind::Tool, "<tool>", "</tool>"},
    {SegmentKind::Result, "<result>", "</result>"},
    {SegmentKind::Answer, "<answer>", "</answer>"},
}};

}  // namespace detail

/// Splits one turn into tagged segments. Tags do not nest: the earliest
/// opening marker wins and extends to the first matching close marker; an
/// opening marker without a close is plain text. Non-whitespace text outside
/// tagged blocks becomes Untagged segments. Never fails.
inline Turn parse_turn(std::string_view raw, Speaker speaker = Speaker::Assistant) {
  Turn turn;
  turn.speaker = speaker;
  turn.raw = std::string(raw);

  auto flush_text = [&](std::size_t b, std::size_t e) {
    auto [tb, te] = detail::trimmed_range(raw, b, e);
    if (tb < te)
      turn.segments.push_back({SegmentKind::Untagged, std::string(raw.substr(tb, te - tb)), tb, te});
  };

  std::size_t text_start = 0;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    std::size_t best = std::string_view::npos;
    const detail::TagName* tag = nullptr;
    for (const auto& t : detail::kTags) {
      auto i = raw.find(t.open, pos);
      if (i < best) {
        best = i;
        tag = &t;
      }
    }
    if (tag == nullptr) break;
    const std::size_t body = best + tag->open.size();
    const auto close = raw.find(tag->close, body);
    if (close == std::string_view::npos) {
      pos = body;
      continue;
    }
    flush_text(text_start, best);
    auto [cb, ce] = detail::trimmed_range(raw, body, close);
    turn.segments.push_back(
        {tag->kind, std::string(raw.substr(cb, ce - cb)), best, close + tag->close.size()});
    text_start = pos = close + tag->close.size();
  }
  flush_text(text_start, raw.size());
  return turn;
}

/// Decodes a `<tool>` body: one `key: value` per line, `name` first.
inline ToolCall parse_tool_call(std::string_view body, const ToolRegistry& registry) {
  ToolCall call;
  std::vector<std::pair<std::string, std::string>> lines;
  std::size_t start = 0;
  while (start <= body.size()) {
    auto nl = body.find('\n', start);
    if (nl == std::string_view::npos) nl = body.size();
    const std::string line = detail::trim(body.substr(start, nl - start));
    start = nl + 1;
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) return call;
    std::string key = detail::trim(std::string_view(line).substr(0, colon));
    std::string value = detail::trim(std::string_view(line).substr(colon + 1));
    if (!detail::is_identifier(key)) return call;
    lines.emplace_back(std::move(key), std::move(value));
  }
  if (lines.empty() || lines.front().first != "name") return call;
  for (std::size_t i = 1; i < lines.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (lines[i].first == lines[j].first) return call;

  call.name = lines.front().second;
  call.args.assign(lines.begin() + 1, lines.end());
  const ToolSpec* spec = registry.find(call.name);
  if (spec == nullptr) {
    call.status = ToolCallStatus::UnknownTool;
    return call;
  }
  for (const auto& a : spec->args) {
    const std::string* v = call.arg(a.name);
    if (v == nullptr) {
      if (a.required) {
        call.status = ToolCallStatus::BadArgs;
        return call;
      }
      continue;
    }
    if (a.well_typed && !a.well_typed(*v)) {
      call.status = ToolCallStatus::BadArgs;
      return call;
    }
  }
  call.status = ToolCallStatus::ParsedValid;
  return call;
}

/// Serializes a decision into protocol text. Answers may not contain `<`
/// (they would escape the second-turn grammar).
inline std::string render_turn(const StructuredDecision& d,
                               std::string_view think_text = kThinkPlaceholder) {
  if (think_text.find('<') != std::string_view::npos)
    throw std::invalid_argument("think text may not contain '<'");
  std::string out = "<think>";
  out += think_text;
  out += "</think>\n";
  switch (d.kind) {
    case DecisionKind::Answer:
      if (d.answer.find('<') != std::string::npos || detail::trim(d.answer).empty())
        throw std::invalid_argument("answer text must be non-empty and free of '<'");
      out += "<answer>" + d.answer + "</answer>";
      return out;
    case DecisionKind::Tool:
      out += "<tool>\nname: zoom\nkeypoint: " + std::to_string(d.keypoint.x) + "," +
             std::to_string(d.keypoint.y) + "\n</tool>";
      return out;
  }
  throw std::invalid_argument("decision is neither tool nor answer");
}

/// True iff `candidate` is matched in full by ([^<]*)</think>([^<]*)<answer>([^<]*)</answer>.
/// Every `<` in a match must begin one of the three literal markers, so the
/// check is a left-to-right walk over the `<` positions.
inline bool constrain_second_turn(std::string_view candidate) {
  constexpr std::array<std::string_view, 3> markers{"</think>", "<answer>", "</answer>"};
  std::size_t pos = 0;
  for (auto m : markers) {
    const auto lt = candidate.find('<', pos);
    if (lt == std::string_view::npos || candidate.substr(lt, m.size()) != m) return false;
    pos = lt + m.size();
  }
  return pos == candidate.size();
}

inline FormatVerdict validate_format(const Transcript& transcript) {
  FormatVerdict v;
  std::vector<const Turn*> assistant;
  for (const auto& t : transcript.turns)
    if (t.speaker == Speaker::Assistant) assistant.push_back(&t);
  if (assistant.empty()) {
    v.violations.emplace_back("no assistant turn");
    return v;
  }

  const auto& first = assistant.front()->segments;
  v.turn1_ok = first.size() == 2 && first[0].kind == SegmentKind::Think &&
               (first[1].kind == SegmentKind::Tool || first[1].kind == SegmentKind::Answer);
  if (!v.turn1_ok) v.violations.emplace_back("turn 1: expected <think> then one <tool> or <answer>");

  v.turn2_ok = true;
  if (assistant.size() >= 2) {
    const bool first_was_tool = first.size() >= 2 && first.back().kind == SegmentKind::Tool;
    const std::string_view raw = assistant[1]->raw;
    constexpr std::string_view open = "<think>";
    if (!first_was_tool) {
      v.turn2_ok = false;
      v.violations.emplace_back("turn 2: follows a final answer");
    } else if (raw.substr(0, open.size()) != open || !constrain_second_turn(raw.substr(open.size()))) {
      v.turn2_ok = false;
      v.violations.emplace_back("turn 2: does not match the answer-only grammar");
    }
    if (assistant.size() > 2) {
      v.turn2_ok = false;
      v.violations.emplace_back("more than two assistant turns");
    }
    for (std::size_t i = 1; i < assistant.size(); ++i) {
      for (const auto& s : assistant[i]->segments) {
        if (s.kind == SegmentKind::Tool && v.turn2_ok) {
          v.turn2_ok = false;
          v.violations.emplace_back("tool call after the first turn");
        }
      }
    }
  }

  for (const auto* t : assistant)
    for (const auto& s : t->segments)
      if (s.kind == SegmentKind::Answer) v.answer_present = true;
  if (!v.answer_present) v.violations.emplace_back("no <answer> segment");
  return v;
}

// ---------------------------------------------------------------------------
// Canonical transcript text: each turn is introduced by `--- <speaker> ---`.

inline std::string_view speaker_name(Speaker s) {
  switch (s) {
    case Speaker::System: return "system";
    case Speaker::User: return "user";
    case Speaker::Assistant: return "assistant";
    case Speaker::ToolResult: return "tool";
  }
  return "unknown";
}

inline std::optional<Speaker> speaker_from_name(std::string_view name) {
  for (auto s : {Speaker::System, Speaker::User, Speaker::Assistant, Speaker::ToolResult})
    if (speaker_name(s) == name) return s;
  return std::nullopt;
}

inline std::string serialize_transcript(const Transcript& t) {
  std::string out;
  for (const auto& turn : t.turns) {
    out += "--- ";
    out += speaker_name(turn.speaker);
    out += " ---\n";
    out += turn.raw;
    out += '\n';
  }
  return out;
}

inline Transcript parse_transcript(std::string_view text) {
  Transcript t;
  std::optional<Speaker> current;
  std::string body;
  bool have_body = false;
  auto flush = [&] {
    if (current) t.turns.push_back(parse_turn(body, *current));
    body.clear();
    have_body = false;
  };
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.size() > 8 && line.substr(0, 4) == "--- " && line.substr(line.size() - 4) == " ---") {
      if (auto s = speaker_from_name(line.substr(4, line.size() - 8))) {
        flush();
        current = s;
        continue;
      }
    }
    if (have_body) body += '\n';
    body += line;
    have_body = true;
  }
  flush();
  return t;
}

}  // namespace zoomrl
