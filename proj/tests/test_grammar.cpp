#include <catch2/catch_amalgamated.hpp>

#include "d2i/grammar.hpp"
#include "helpers.hpp"

using namespace d2i;
using d2i::testing::all_strategies;
using d2i::testing::valid_response;

namespace {

const Vocab& V() { return Vocab::canonical(); }

ParsedResponse parse(const std::string& text) { return parse_tagged(V().tokenize(text), V()); }

ValidationResult check(const std::string& text, StrategyKind s,
                       ReasoningMode m = ReasoningMode::Deliberate) {
  return validate(parse(text), spec_for(s, m), V());
}

bool has_violation(const ValidationResult& r, ViolationKind k,
                   std::optional<Tag> tag = std::nullopt) {
  for (const auto& v : r.violations)
    if (v.kind == k && (!tag || v.tag == tag)) return true;
  return false;
}

}  // namespace

TEST_CASE("parse_tagged: nested LOC template") {
  auto p = parse("<think> value <box> ( 1 , 2 ) </box> </think> <answer> 4 </answer>");
  REQUIRE(p.well_nested);
  REQUIRE(p.blocks.size() == 3);
  REQUIRE(p.blocks[0].tag == Tag::Think);
  REQUIRE(p.blocks[0].depth == 0);
  REQUIRE(p.blocks[1].tag == Tag::Box);
  REQUIRE(p.blocks[1].depth == 1);
  REQUIRE(p.parent_of(p.blocks[1])->tag == Tag::Think);
  REQUIRE(p.blocks[2].tag == Tag::Answer);
  REQUIRE(p.blocks[2].depth == 0);
  REQUIRE(p.residual.empty());
}

TEST_CASE("parse_tagged: unclosed think flips well_nested") {
  auto p = parse("<think> value <answer> 4 </answer>");
  REQUIRE_FALSE(p.well_nested);
  REQUIRE(p.open_stack == std::vector<Tag>{Tag::Think});
}

TEST_CASE("parse_tagged: untagged text is residual") {
  auto p = parse("value value 4");
  REQUIRE(p.well_nested);
  REQUIRE(p.blocks.empty());
  REQUIRE(p.residual.size() == 1);
  REQUIRE(p.residual[0].begin == 0);
  REQUIRE(p.residual[0].end == 3);
}

TEST_CASE("parse_tagged: stray closer is unbalanced") {
  auto p = parse("</think> value");
  REQUIRE_FALSE(p.well_nested);
  REQUIRE(p.unbalanced_tag == Tag::Think);
  auto q = parse("<think> </answer> </think>");
  REQUIRE_FALSE(q.well_nested);
  REQUIRE(q.unbalanced_tag == Tag::Answer);
  REQUIRE(q.blocks.size() == 1);  // think still matches
}

TEST_CASE("parse_tagged: determinism") {
  TokenSeq tokens = V().tokenize("<think> value </think> what <answer> 4 </answer>");
  auto a = parse_tagged(tokens, V());
  auto b = parse_tagged(tokens, V());
  REQUIRE(a.well_nested == b.well_nested);
  REQUIRE(a.blocks.size() == b.blocks.size());
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    REQUIRE(a.blocks[i].open_pos == b.blocks[i].open_pos);
    REQUIRE(a.blocks[i].content.begin == b.blocks[i].content.begin);
    REQUIRE(a.blocks[i].content.end == b.blocks[i].content.end);
  }
}

TEST_CASE("parse_tagged: blocks are disjoint or strictly nested") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    auto p = parse_tagged(d2i::testing::random_tokens(rng, V(), 1 + trial % 30), V());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      for (std::size_t j = i + 1; j < p.blocks.size(); ++j) {
        const auto& a = p.blocks[i];
        const auto& b = p.blocks[j];
        bool disjoint = a.content.end <= b.open_pos || b.content.end <= a.open_pos;
        bool a_inside_b = b.open_pos < a.open_pos && a.content.end <= b.content.end &&
                          a.depth > b.depth;
        bool b_inside_a = a.open_pos < b.open_pos && b.content.end <= a.content.end &&
                          b.depth > a.depth;
        REQUIRE((disjoint || a_inside_b || b_inside_a));
      }
    }
    // residual spans are in order and disjoint
    for (std::size_t i = 1; i < p.residual.size(); ++i)
      REQUIRE(p.residual[i - 1].end < p.residual[i].begin);
  }
}

TEST_CASE("spec_for: deliberate grammars match the strategy templates") {
  auto base = spec_for(StrategyKind::Base, ReasoningMode::Deliberate);
  REQUIRE(base.required_blocks.size() == 2);
  REQUIRE(base.required_blocks[0].tag == Tag::Think);
  REQUIRE(base.required_blocks[1].tag == Tag::Answer);
  REQUIRE_FALSE(base.allow_untagged);

  auto loc = spec_for(StrategyKind::Loc, ReasoningMode::Deliberate);
  REQUIRE(loc.required_blocks.size() == 3);
  REQUIRE(loc.required_blocks[1].tag == Tag::Box);
  REQUIRE(loc.required_blocks[1].parent == Tag::Think);

  auto jus = spec_for(StrategyKind::Jus, ReasoningMode::Deliberate);
  REQUIRE(jus.required_blocks[0].tag == Tag::Think);
  REQUIRE(jus.required_blocks[1].tag == Tag::Crucial);
  REQUIRE(jus.required_blocks[2].tag == Tag::Answer);

  auto par = spec_for(StrategyKind::Par, ReasoningMode::Deliberate);
  REQUIRE(par.required_blocks[0].tag == Tag::Parse);
  REQUIRE(par.required_blocks[0].must_be_first);
  REQUIRE(par.required_blocks[1].tag == Tag::Think);
  REQUIRE(par.required_blocks[2].tag == Tag::Answer);
}

TEST_CASE("spec_for: intuitive admits everything") {
  for (StrategyKind s : all_strategies()) {
    auto spec = spec_for(s, ReasoningMode::Intuitive);
    REQUIRE(spec.allow_untagged);
    REQUIRE(spec.required_blocks.empty());
  }
}

TEST_CASE("validate: valid LOC response passes") {
  auto r = check("<think> value <box> ( 1 , 2 ) </box> value </think> <answer> 4 </answer>",
                 StrategyKind::Loc);
  REQUIRE(r.ok);
  REQUIRE(r.violations.empty());
}

TEST_CASE("validate: empty crucial block is BadContent") {
  auto r = check("<think> value </think> <crucial> </crucial> <answer> 4 </answer>",
                 StrategyKind::Jus);
  REQUIRE_FALSE(r.ok);
  REQUIRE(r.violations.size() == 1);
  REQUIRE(has_violation(r, ViolationKind::BadContent, Tag::Crucial));
}

TEST_CASE("validate: parse block after think is WrongOrder") {
  auto r = check("<think> value </think> <parse> cell ( value ) </parse> <answer> 4 </answer>",
                 StrategyKind::Par);
  REQUIRE_FALSE(r.ok);
  REQUIRE(has_violation(r, ViolationKind::WrongOrder, Tag::Parse));
}

TEST_CASE("validate: every violation kind is reachable") {
  REQUIRE(has_violation(check("<think> value </think>", StrategyKind::Base),
                        ViolationKind::MissingTag, Tag::Answer));
  REQUIRE(has_violation(check("<think> value </think> <answer> 4 </answer> <answer> 5 "
                              "</answer>", StrategyKind::Base),
                        ViolationKind::DuplicateTag, Tag::Answer));
  REQUIRE(has_violation(check("<answer> 4 </answer> <think> value </think>",
                              StrategyKind::Base),
                        ViolationKind::WrongOrder, Tag::Think));
  REQUIRE(has_violation(check("<think> value <answer> 4 </answer> </think>",
                              StrategyKind::Base),
                        ViolationKind::WrongNesting, Tag::Answer));
  REQUIRE(has_violation(check("<think> </think> <answer> 4 </answer>", StrategyKind::Base),
                        ViolationKind::BadContent, Tag::Think));
  REQUIRE(has_violation(check("what <think> value </think> <answer> 4 </answer>",
                              StrategyKind::Base),
                        ViolationKind::StrayText));
  REQUIRE(has_violation(check("<think> value </think> <answer> 4", StrategyKind::Base),
                        ViolationKind::Unbalanced, Tag::Answer));
}

TEST_CASE("validate: box outside think is WrongNesting") {
  auto r = check("<think> value </think> <box> ( 1 , 2 ) </box> <answer> 4 </answer>",
                 StrategyKind::Loc);
  REQUIRE(has_violation(r, ViolationKind::WrongNesting, Tag::Box));
}

TEST_CASE("validate: unexpected block counts as stray material") {
  auto r = check("<think> value <box> ( 1 , 2 ) </box> </think> <answer> 4 </answer>",
                 StrategyKind::Base);
  REQUIRE_FALSE(r.ok);
  REQUIRE(has_violation(r, ViolationKind::StrayText, Tag::Box));
}

TEST_CASE("validate: violations enumerate every failed rule") {
  auto r = check("what <answer> </answer>", StrategyKind::Jus);
  REQUIRE(has_violation(r, ViolationKind::MissingTag, Tag::Think));
  REQUIRE(has_violation(r, ViolationKind::MissingTag, Tag::Crucial));
  REQUIRE(has_violation(r, ViolationKind::BadContent, Tag::Answer));
  REQUIRE(has_violation(r, ViolationKind::StrayText));
}

TEST_CASE("validate: box content shape") {
  auto ok = [&](const std::string& content) {
    return check("<think> value <box> " + content + " </box> </think> <answer> 4 </answer>",
                 StrategyKind::Loc)
        .ok;
  };
  REQUIRE(ok("( 1 , 2 )"));
  REQUIRE(ok("( 12 , 305 )"));
  REQUIRE_FALSE(ok(""));
  REQUIRE_FALSE(ok("( 1 , 2"));
  REQUIRE_FALSE(ok("( 1 2 )"));
  REQUIRE_FALSE(ok("( , 2 )"));
  REQUIRE_FALSE(ok("( 1 , 2 ) ( 3 , 4 )"));
  REQUIRE_FALSE(ok("( 1 , value )"));
  REQUIRE_FALSE(ok("1 , 2"));
}

TEST_CASE("validate: crucial content needs three tokens and a word") {
  auto ok = [&](const std::string& content) {
    return check("<think> value </think> <crucial> " + content + " </crucial> <answer> 4 "
                 "</answer>", StrategyKind::Jus)
        .ok;
  };
  REQUIRE(ok("crucial region value"));
  REQUIRE(ok("value 1 2"));
  REQUIRE_FALSE(ok("value value"));  // too short
  REQUIRE_FALSE(ok("1 2 3"));        // no word token
}

TEST_CASE("validate: parse content needs a predicate run") {
  auto ok = [&](const std::string& content) {
    return check("<parse> " + content + " </parse> <think> value </think> <answer> 4 "
                 "</answer>", StrategyKind::Par)
        .ok;
  };
  REQUIRE(ok("cell ( value )"));
  REQUIRE(ok("scene cell ( value , value , region )"));
  REQUIRE(ok("1 2 cell ( value ) 3"));
  REQUIRE_FALSE(ok("cell value"));
  REQUIRE_FALSE(ok("cell ( 1 )"));
  REQUIRE_FALSE(ok("( value )"));
  REQUIRE_FALSE(ok("cell ( value"));
}

TEST_CASE("grammar round trip: templates validate for every strategy") {
  for (StrategyKind s : all_strategies()) {
    auto parsed = parse_tagged(valid_response(s, V()), V());
    REQUIRE(parsed.well_nested);
    auto r = validate(parsed, spec_for(s, ReasoningMode::Deliberate), V());
    CAPTURE(strategy_name(s));
    REQUIRE(r.ok);
  }
}

TEST_CASE("grammar deletion sensitivity: dropping any tag token invalidates") {
  for (StrategyKind s : all_strategies()) {
    TokenSeq tokens = valid_response(s, V());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!V().is_tag(tokens[i])) continue;
      TokenSeq mutated = tokens;
      mutated.erase(mutated.begin() + static_cast<std::ptrdiff_t>(i));
      auto r = validate(parse_tagged(mutated, V()), spec_for(s, ReasoningMode::Deliberate), V());
      CAPTURE(strategy_name(s), i);
      REQUIRE_FALSE(r.ok);
    }
  }
}

TEST_CASE("grammar monotonicity: intuitive validates every sequence") {
  Rng rng(23);
  for (StrategyKind s : all_strategies()) {
    auto spec = spec_for(s, ReasoningMode::Intuitive);
    for (int trial = 0; trial < 200; ++trial) {
      TokenSeq tokens = d2i::testing::random_tokens(rng, V(), trial % 24);
      REQUIRE(validate(parse_tagged(tokens, V()), spec, V()).ok);
    }
  }
}
