#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "d2i/errors.hpp"
#include "d2i/vocab.hpp"

namespace d2i {

/// BASE is the plain think/answer format; LOC, JUS and PAR each add one
/// deliberate block (box coordinates, crucial-region description, scene parse).
enum class StrategyKind { Base, Loc, Jus, Par };

enum class ReasoningMode { Deliberate, Intuitive };

inline const char* strategy_name(StrategyKind s) {
  switch (s) {
    case StrategyKind::Base: return "base";
    case StrategyKind::Loc: return "loc";
    case StrategyKind::Jus: return "jus";
    case StrategyKind::Par: return "par";
  }
  return "?";
}

inline std::optional<StrategyKind> strategy_from_name(const std::string& s) {
  if (s == "base") return StrategyKind::Base;
  if (s == "loc") return StrategyKind::Loc;
  if (s == "jus") return StrategyKind::Jus;
  if (s == "par") return StrategyKind::Par;
  return std::nullopt;
}

inline const char* mode_name(ReasoningMode m) {
  return m == ReasoningMode::Deliberate ? "deliberate" : "intuitive";
}

inline std::optional<ReasoningMode> mode_from_name(const std::string& s) {
  if (s == "deliberate") return ReasoningMode::Deliberate;
  if (s == "intuitive") return ReasoningMode::Intuitive;
  return std::nullopt;
}

enum class ContentRule { None, NonEmpty, BoxCoordinate, CrucialText, ParsePredicates };

struct BlockRule {
  Tag tag;
  bool must_be_first = false;
  std::optional<Tag> parent;  // nesting parent; nullopt = top level
  ContentRule content = ContentRule::None;
};

/// Machine-checkable grammar for one (strategy, mode) pair.
struct FormatSpec {
  StrategyKind strategy = StrategyKind::Base;
  ReasoningMode mode = ReasoningMode::Deliberate;
  std::vector<BlockRule> required_blocks;  // required document order
  bool allow_untagged = false;             // true only in Intuitive mode
};

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // half-open
  std::size_t size() const { return end - begin; }
};

struct Block {
  Tag tag;
  std::size_t open_pos = 0;  // index of the opening tag token
  TokenSpan content;         // interior span, nested blocks included
  int depth = 0;             // number of enclosing open blocks
  std::optional<std::size_t> parent_open_pos;  // innermost enclosing opener
};

/// Segmentation of a token sequence into matched tag blocks plus residual
/// text. Malformed nesting is reported through well_nested, never an error.
struct ParsedResponse {
  TokenSeq tokens;
  std::vector<Block> blocks;      // matched blocks, document order
  std::vector<TokenSpan> residual;  // maximal non-tag spans outside all blocks
  std::vector<Tag> open_stack;    // tags left open, outermost first
  bool well_nested = true;
  std::optional<Tag> unbalanced_tag;

  const Block* find(Tag t) const {
    for (const auto& b : blocks)
      if (b.tag == t) return &b;
    return nullptr;
  }
  const Block* parent_of(const Block& b) const {
    if (!b.parent_open_pos) return nullptr;
    for (const auto& p : blocks)
      if (p.open_pos == *b.parent_open_pos) return &p;
    return nullptr;
  }
};

enum class ViolationKind {
  MissingTag, DuplicateTag, WrongOrder, WrongNesting, BadContent, StrayText, Unbalanced
};

struct Violation {
  ViolationKind kind;
  std::optional<Tag> tag;
  bool operator==(const Violation&) const = default;
};

inline const char* violation_kind_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::MissingTag: return "MissingTag";
    case ViolationKind::DuplicateTag: return "DuplicateTag";
    case ViolationKind::WrongOrder: return "WrongOrder";
    case ViolationKind::WrongNesting: return "WrongNesting";
    case ViolationKind::BadContent: return "BadContent";
    case ViolationKind::StrayText: return "StrayText";
    case ViolationKind::Unbalanced: return "Unbalanced";
  }
  return "?";
}

inline std::string to_string(const Violation& v) {
  std::string out = violation_kind_name(v.kind);
  if (v.tag) {
    out.push_back(' ');
    out += tag_name(*v.tag);
  }
  return out;
}

/// Single-pass pushdown segmentation. A closer only matches the innermost
/// open tag; anything else flips well_nested and the token is skipped.
inline ParsedResponse parse_tagged(TokenSeq tokens, const Vocab& vocab) {
  ParsedResponse out;
  out.tokens = std::move(tokens);

  struct OpenEntry {
    Tag tag;
    std::size_t pos;
  };
  std::vector<OpenEntry> stack;
  std::optional<std::size_t> residual_start;

  auto flush_residual = [&](std::size_t end) {
    if (residual_start) {
      out.residual.push_back({*residual_start, end});
      residual_start.reset();
    }
  };

  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    Token tok = out.tokens[i];
    TokenClass cls = vocab.classify(tok);
    if (cls == TokenClass::TagOpen) {
      flush_residual(i);
      stack.push_back({*vocab.tag_of(tok), i});
    } else if (cls == TokenClass::TagClose) {
      flush_residual(i);
      Tag t = *vocab.tag_of(tok);
      if (!stack.empty() && stack.back().tag == t) {
        Block b;
        b.tag = t;
        b.open_pos = stack.back().pos;
        b.content = {stack.back().pos + 1, i};
        stack.pop_back();
        b.depth = static_cast<int>(stack.size());
        if (!stack.empty()) b.parent_open_pos = stack.back().pos;
        out.blocks.push_back(b);
      } else {
        out.well_nested = false;
        if (!out.unbalanced_tag) out.unbalanced_tag = t;
      }
    } else if (stack.empty()) {
      if (!residual_start) residual_start = i;
    }
  }
  flush_residual(out.tokens.size());

  if (!stack.empty()) {
    out.well_nested = false;
    if (!out.unbalanced_tag) out.unbalanced_tag = stack.back().tag;
    for (const auto& e : stack) out.open_stack.push_back(e.tag);
  }
  std::sort(out.blocks.begin(), out.blocks.end(),
            [](const Block& a, const Block& b) { return a.open_pos < b.open_pos; });
  return out;
}

namespace detail {

inline bool all_digits(const ParsedResponse& p, std::size_t begin, std::size_t end,
                       const Vocab& vocab) {
  if (begin >= end) return false;
  for (std::size_t i = begin; i < end; ++i)
    if (vocab.classify(p.tokens[i]) != TokenClass::Digit) return false;
  return true;
}

/// "( int , int )" over digit/comma/paren tokens only.
inline bool box_coordinate_ok(const ParsedResponse& p, TokenSpan s, const Vocab& vocab) {
  std::size_t i = s.begin;
  auto is = [&](std::size_t k, const char* lit) {
    return k < s.end && vocab.token(p.tokens[k]) == lit;
  };
  if (!is(i, "(")) return false;
  ++i;
  std::size_t start = i;
  while (i < s.end && vocab.classify(p.tokens[i]) == TokenClass::Digit) ++i;
  if (i == start || !is(i, ",")) return false;
  ++i;
  start = i;
  while (i < s.end && vocab.classify(p.tokens[i]) == TokenClass::Digit) ++i;
  if (i == start || !is(i, ")")) return false;
  ++i;
  return i == s.end;
}

/// At least 3 tokens, at least one of them a plain word.
inline bool crucial_text_ok(const ParsedResponse& p, TokenSpan s, const Vocab& vocab) {
  if (s.size() < 3) return false;
  for (std::size_t i = s.begin; i < s.end; ++i)
    if (vocab.classify(p.tokens[i]) == TokenClass::Word) return true;
  return false;
}

/// At least one predicate-shaped run: word ( word {, word} ).
inline bool parse_predicates_ok(const ParsedResponse& p, TokenSpan s, const Vocab& vocab) {
  auto word_at = [&](std::size_t k) {
    return k < s.end && vocab.classify(p.tokens[k]) == TokenClass::Word;
  };
  auto lit_at = [&](std::size_t k, const char* lit) {
    return k < s.end && vocab.token(p.tokens[k]) == lit;
  };
  for (std::size_t i = s.begin; i + 3 < s.end; ++i) {
    if (!word_at(i) || !lit_at(i + 1, "(") || !word_at(i + 2)) continue;
    std::size_t j = i + 3;
    while (lit_at(j, ",") && word_at(j + 1)) j += 2;
    if (lit_at(j, ")")) return true;
  }
  return false;
}

inline bool content_ok(ContentRule rule, const ParsedResponse& p, TokenSpan s,
                       const Vocab& vocab) {
  switch (rule) {
    case ContentRule::None: return true;
    case ContentRule::NonEmpty: return s.size() > 0;
    case ContentRule::BoxCoordinate: return box_coordinate_ok(p, s, vocab);
    case ContentRule::CrucialText: return crucial_text_ok(p, s, vocab);
    case ContentRule::ParsePredicates: return parse_predicates_ok(p, s, vocab);
  }
  return false;
}

}  // namespace detail

/// Grammar for a (strategy, mode) pair. Deliberate mode yields the strict tag
/// template of the strategy; Intuitive mode admits any token sequence.
inline FormatSpec spec_for(StrategyKind strategy, ReasoningMode mode) {
  FormatSpec spec;
  spec.strategy = strategy;
  spec.mode = mode;
  if (mode == ReasoningMode::Intuitive) {
    spec.allow_untagged = true;
    return spec;
  }
  const BlockRule think{Tag::Think, false, std::nullopt, ContentRule::NonEmpty};
  const BlockRule answer{Tag::Answer, false, std::nullopt, ContentRule::NonEmpty};
  switch (strategy) {
    case StrategyKind::Base:
      spec.required_blocks = {think, answer};
      break;
    case StrategyKind::Loc:
      spec.required_blocks = {think,
                              {Tag::Box, false, Tag::Think, ContentRule::BoxCoordinate},
                              answer};
      break;
    case StrategyKind::Jus:
      spec.required_blocks = {think,
                              {Tag::Crucial, false, std::nullopt, ContentRule::CrucialText},
                              answer};
      break;
    case StrategyKind::Par:
      spec.required_blocks = {{Tag::Parse, true, std::nullopt, ContentRule::ParsePredicates},
                              think, answer};
      break;
  }
  return spec;
}

struct ValidationResult {
  bool ok = false;
  std::vector<Violation> violations;
};

/// Checks a parsed response against a format spec. Every failed rule is
/// reported, deduplicated by (kind, tag). Under allow_untagged every input
/// passes unconditionally.
inline ValidationResult validate(const ParsedResponse& parsed, const FormatSpec& spec,
                                 const Vocab& vocab) {
  ValidationResult res;
  if (spec.allow_untagged) {
    res.ok = true;
    return res;
  }
  auto add = [&](ViolationKind kind, std::optional<Tag> tag) {
    Violation v{kind, tag};
    for (const auto& existing : res.violations)
      if (existing == v) return;
    res.violations.push_back(v);
  };

  if (!parsed.well_nested) add(ViolationKind::Unbalanced, parsed.unbalanced_tag);

  auto count_of = [&](Tag t) {
    std::size_t n = 0;
    for (const auto& b : parsed.blocks)
      if (b.tag == t) ++n;
    return n;
  };

  for (const auto& rule : spec.required_blocks) {
    std::size_t n = count_of(rule.tag);
    if (n == 0) add(ViolationKind::MissingTag, rule.tag);
    if (n > 1) add(ViolationKind::DuplicateTag, rule.tag);
  }

  // required order over first occurrences; the violation names the tag that
  // should have come earlier
  for (std::size_t i = 0; i < spec.required_blocks.size(); ++i) {
    const Block* bi = parsed.find(spec.required_blocks[i].tag);
    if (!bi) continue;
    for (std::size_t j = i + 1; j < spec.required_blocks.size(); ++j) {
      const Block* bj = parsed.find(spec.required_blocks[j].tag);
      if (bj && bi->open_pos > bj->open_pos) add(ViolationKind::WrongOrder,
                                                 spec.required_blocks[i].tag);
    }
    if (spec.required_blocks[i].must_be_first) {
      for (const auto& b : parsed.blocks)
        if (b.tag != spec.required_blocks[i].tag && b.open_pos < bi->open_pos)
          add(ViolationKind::WrongOrder, spec.required_blocks[i].tag);
    }
  }

  for (const auto& rule : spec.required_blocks) {
    for (const auto& b : parsed.blocks) {
      if (b.tag != rule.tag) continue;
      if (rule.parent) {
        const Block* parent = parsed.parent_of(b);
        if (!parent || parent->tag != *rule.parent) add(ViolationKind::WrongNesting, rule.tag);
      } else if (b.depth != 0) {
        add(ViolationKind::WrongNesting, rule.tag);
      }
      if (!detail::content_ok(rule.content, parsed, b.content, vocab))
        add(ViolationKind::BadContent, rule.tag);
    }
  }

  // blocks the template does not mention are stray material
  for (const auto& b : parsed.blocks) {
    bool expected = false;
    for (const auto& rule : spec.required_blocks)
      if (rule.tag == b.tag) expected = true;
    if (!expected) add(ViolationKind::StrayText, b.tag);
  }

  if (!parsed.residual.empty()) add(ViolationKind::StrayText, std::nullopt);

  res.ok = res.violations.empty();
  return res;
}

}  // namespace d2i
