#include <gtest/gtest.h>

#include <random>
#include <regex>
#include <string>
#include <vector>

#include "zoomrl/protocol.hpp"
#include "zoomrl/zoomtool.hpp"

using namespace zoomrl;

namespace {

// Reference matcher for the second-turn grammar.
bool regex_oracle(const std::string& s) {
  static const std::regex re("([^<]*)</think>([^<]*)<answer>([^<]*)</answer>");
  return std::regex_match(s, re);
}

std::string random_text(std::mt19937_64& rng, int max_pieces) {
  static const std::vector<std::string> pieces{
      "<think>", "</think>", "<tool>", "</tool>", "<answer>", "</answer>", "<result>", "</result>",
      "<", ">", "/", "a", "B", " ", "\n", "name: zoom", "keypoint: 3,4", ":", "x", "<answ", "er>", "\t"};
  std::uniform_int_distribution<int> n(0, max_pieces);
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::string s;
  for (int i = n(rng); i > 0; --i) s += pieces[pick(rng)];
  return s;
}

void expect_turn_invariants(const Turn& t) {
  std::size_t prev_end = 0;
  for (const auto& seg : t.segments) {
    ASSERT_LE(prev_end, seg.begin);
    ASSERT_LE(seg.begin, seg.end);
    ASSERT_LE(seg.end, t.raw.size());
    if (!seg.content.empty()) ASSERT_LT(seg.begin, seg.end);
    for (std::size_t i = prev_end; i < seg.begin; ++i) ASSERT_TRUE(std::isspace(static_cast<unsigned char>(t.raw[i])));
    prev_end = seg.end;
  }
  for (std::size_t i = prev_end; i < t.raw.size(); ++i) ASSERT_TRUE(std::isspace(static_cast<unsigned char>(t.raw[i])));
}

Transcript transcript_of(std::initializer_list<std::pair<Speaker, std::string>> turns) {
  Transcript t;
  for (const auto& [who, text] : turns) t.turns.push_back(parse_turn(text, who));
  return t;
}

}  // namespace

TEST(ParseTurn, ThinkThenAnswer) {
  const Turn t = parse_turn("<think>x</think><answer>cat</answer>");
  ASSERT_EQ(t.segments.size(), 2u);
  EXPECT_EQ(t.segments[0].kind, SegmentKind::Think);
  EXPECT_EQ(t.segments[0].content, "x");
  EXPECT_EQ(t.segments[1].kind, SegmentKind::Answer);
  EXPECT_EQ(t.segments[1].content, "cat");
}

TEST(ParseTurn, UnclosedTagIsPlainText) {
  const Turn t = parse_turn("<answer>dog");
  ASSERT_EQ(t.segments.size(), 1u);
  EXPECT_EQ(t.segments[0].kind, SegmentKind::Untagged);
  EXPECT_EQ(t.segments[0].content, "<answer>dog");
  EXPECT_EQ(t.segments[0].begin, 0u);
  EXPECT_EQ(t.segments[0].end, 11u);
}

TEST(ParseTurn, ToolBlockRoundTripsThroughRender) {
  const std::string raw = "<think>t</think><tool>\nname: zoom\nkeypoint: 12,40\n</tool>";
  const Turn t = parse_turn(raw);
  ASSERT_EQ(t.segments.size(), 2u);
  EXPECT_EQ(t.segments[1].kind, SegmentKind::Tool);
  EXPECT_EQ(t.segments[1].content, "name: zoom\nkeypoint: 12,40");

  const auto rendered = render_turn(StructuredDecision::tool({12, 40}), "t");
  const Turn again = parse_turn(rendered);
  ASSERT_EQ(again.segments.size(), 2u);
  EXPECT_EQ(again.segments[0].content, t.segments[0].content);
  EXPECT_EQ(again.segments[1].content, t.segments[1].content);
}

TEST(ParseTurn, FuzzIsTotalAndKeepsSpanInvariants) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20000; ++i) {
    const std::string s = random_text(rng, 14);
    Turn t;
    ASSERT_NO_THROW(t = parse_turn(s)) << s;
    expect_turn_invariants(t);
  }
}

TEST(ParseToolCall, ValidZoomCall) {
  const auto reg = default_registry();
  const ToolCall c = parse_tool_call("name: zoom\nkeypoint: 12,40", reg);
  EXPECT_EQ(c.status, ToolCallStatus::ParsedValid);
  EXPECT_EQ(c.name, "zoom");
  ASSERT_EQ(c.args.size(), 1u);
  EXPECT_EQ(c.args[0].first, "keypoint");
  EXPECT_EQ(c.args[0].second, "12,40");
}

TEST(ParseToolCall, NameMustComeFirst) {
  EXPECT_EQ(parse_tool_call("keypoint: 12,40\nname: zoom", default_registry()).status, ToolCallStatus::ParseError);
}

TEST(ParseToolCall, UnknownAndBadArgs) {
  const auto reg = default_registry();
  EXPECT_EQ(parse_tool_call("name: teleport", reg).status, ToolCallStatus::UnknownTool);
  EXPECT_EQ(parse_tool_call("name: zoom", reg).status, ToolCallStatus::BadArgs);
  EXPECT_EQ(parse_tool_call("name: zoom\nkeypoint: banana", reg).status, ToolCallStatus::BadArgs);
  EXPECT_EQ(parse_tool_call("name: zoom\nkeypoint: 1,2\nkeypoint: 3,4", reg).status, ToolCallStatus::ParseError);
  EXPECT_EQ(parse_tool_call("no colon here", reg).status, ToolCallStatus::ParseError);
  EXPECT_EQ(parse_tool_call("", reg).status, ToolCallStatus::ParseError);
}

TEST(ParseToolCall, ValidImpliesRegisteredAndTyped) {
  const auto reg = default_registry();
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    const ToolCall c = parse_tool_call(random_text(rng, 8), reg);
    if (c.status != ToolCallStatus::ParsedValid) continue;
    ASSERT_NE(reg.find(c.name), nullptr);
    ASSERT_NE(c.arg("keypoint"), nullptr);
    ASSERT_TRUE(parse_keypoint(*c.arg("keypoint")).has_value());
  }
}

TEST(RenderTurn, Examples) {
  EXPECT_EQ(render_turn(StructuredDecision::answer_with("B")), "<think>reasoning</think>\n<answer>B</answer>");
  EXPECT_EQ(render_turn(StructuredDecision::tool({12, 40})),
            "<think>reasoning</think>\n<tool>\nname: zoom\nkeypoint: 12,40\n</tool>");
  EXPECT_NE(render_turn(StructuredDecision::tool({0, 0})).find("keypoint: 0,0"), std::string::npos);
  EXPECT_THROW(render_turn(StructuredDecision::answer_with("a<b")), std::invalid_argument);
}

TEST(RenderTurn, RoundTripOverAllDecisions) {
  const auto reg = default_registry();
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Turn t = parse_turn(render_turn(StructuredDecision::tool({x, y})));
      ASSERT_EQ(t.segments.size(), 2u);
      const ToolCall c = parse_tool_call(t.segments[1].content, reg);
      ASSERT_EQ(c.status, ToolCallStatus::ParsedValid);
      const auto kp = parse_keypoint(*c.arg("keypoint"));
      ASSERT_TRUE(kp);
      EXPECT_EQ(*kp, (Keypoint{x, y}));
    }
  for (const std::string a : {"A", "B", "C", "D", "E", "F", "G", "H", "unknown"}) {
    const Turn t = parse_turn(render_turn(StructuredDecision::answer_with(a)));
    ASSERT_EQ(t.segments.size(), 2u);
    EXPECT_EQ(t.segments[1].kind, SegmentKind::Answer);
    EXPECT_EQ(t.segments[1].content, a);
  }
}

TEST(ConstrainSecondTurn, Examples) {
  EXPECT_TRUE(constrain_second_turn("r</think> ok <answer>cat</answer>"));
  EXPECT_FALSE(constrain_second_turn("x</think><tool>name: zoom</tool><answer>y</answer>"));
  EXPECT_FALSE(constrain_second_turn(""));
  EXPECT_FALSE(constrain_second_turn("</think><answer>a</answer> "));
}

TEST(ConstrainSecondTurn, AgreesWithRegexAndNeverAdmitsToolCall) {
  std::mt19937_64 rng(5);
  int accepted = 0;
  for (int i = 0; i < 20000; ++i) {
    std::string s = random_text(rng, 10);
    // bias towards near-misses of the grammar
    if (i % 2 == 0) s = random_text(rng, 2) + "</think>" + random_text(rng, 2) + "<answer>" + random_text(rng, 2) + "</answer>";
    const bool ok = constrain_second_turn(s);
    ASSERT_EQ(ok, regex_oracle(s)) << s;
    if (!ok) continue;
    ++accepted;
    const Turn t = parse_turn("<think>" + s);
    int answers = 0;
    for (const auto& seg : t.segments) {
      ASSERT_NE(seg.kind, SegmentKind::Tool) << s;
      answers += seg.kind == SegmentKind::Answer;
    }
    ASSERT_EQ(answers, 1) << s;
  }
  EXPECT_GT(accepted, 100);
}

TEST(ValidateFormat, SingleAnswerTurn) {
  const auto v = validate_format(transcript_of({{Speaker::Assistant, "<think>a</think><answer>B</answer>"}}));
  EXPECT_TRUE(v.turn1_ok);
  EXPECT_TRUE(v.turn2_ok);
  EXPECT_TRUE(v.answer_present);
  EXPECT_TRUE(v.violations.empty());
}

TEST(ValidateFormat, ToolThenAnswer) {
  const auto v = validate_format(transcript_of({{Speaker::Assistant, render_turn(StructuredDecision::tool({1, 2}))},
                                                {Speaker::ToolResult, "<result>\n<image>\n</result>"},
                                                {Speaker::Assistant, "<think>r</think>\n<answer>B</answer>"}}));
  EXPECT_TRUE(v.ok());
  EXPECT_TRUE(v.violations.empty());
}

TEST(ValidateFormat, SecondToolCallRejected) {
  const auto v = validate_format(transcript_of({{Speaker::Assistant, render_turn(StructuredDecision::tool({1, 2}))},
                                                {Speaker::ToolResult, "<result>\n<image>\n</result>"},
                                                {Speaker::Assistant, render_turn(StructuredDecision::tool({3, 4}))}}));
  EXPECT_FALSE(v.turn2_ok);
  EXPECT_FALSE(v.answer_present);
  EXPECT_FALSE(v.violations.empty());
}

TEST(ValidateFormat, OkIffNoViolations) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 5000; ++i) {
    Transcript t;
    const int turns = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < turns; ++k)
      t.turns.push_back(parse_turn(random_text(rng, 8), k == 1 ? Speaker::ToolResult : Speaker::Assistant));
    const auto v = validate_format(t);
    ASSERT_EQ(v.ok(), v.violations.empty());
  }
}

TEST(Transcript, SerializeParseRoundTrip) {
  const Transcript t = transcript_of({{Speaker::System, "sys\nline two"},
                                      {Speaker::User, "<image>\nquestion"},
                                      {Speaker::Assistant, render_turn(StructuredDecision::tool({5, 6}))},
                                      {Speaker::ToolResult, "<result>\n<image>\n</result>"},
                                      {Speaker::Assistant, "<think>r</think>\n<answer>C</answer>"}});
  const Transcript back = parse_transcript(serialize_transcript(t));
  ASSERT_EQ(back.turns.size(), t.turns.size());
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    EXPECT_EQ(back.turns[i].speaker, t.turns[i].speaker);
    EXPECT_EQ(back.turns[i].raw, t.turns[i].raw);
    EXPECT_EQ(back.turns[i].segments, t.turns[i].segments);
  }
}
