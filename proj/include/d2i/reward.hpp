#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "d2i/grammar.hpp"
#include "d2i/vocab.hpp"

namespace d2i {

enum class GoldKind { Numeric, Symbolic };

struct GoldAnswer {
  GoldKind kind = GoldKind::Numeric;
  long numeric = 0;
  std::string symbolic;

  static GoldAnswer number(long v) { return {GoldKind::Numeric, v, {}}; }
  static GoldAnswer symbol(std::string s) { return {GoldKind::Symbolic, 0, std::move(s)}; }
};

/// Per-component weights for the combined reward. Defaults reproduce the
/// plain average of format and accuracy.
struct RewardWeights {
  double format = 0.5;
  double accuracy = 0.5;
};

struct RewardBreakdown {
  double format = 0.0;    // in {0, 1}
  double accuracy = 0.0;  // in {0, 1}
  double total = 0.0;     // weights applied; {0, 0.5, 1} at defaults
};

/// 1 iff the response validates against the spec. Structure only; block
/// contents beyond the spec's shape rules never matter.
inline double format_reward(const TokenSeq& response, const FormatSpec& spec,
                            const Vocab& vocab) {
  return validate(parse_tagged(response, vocab), spec, vocab).ok ? 1.0 : 0.0;
}

/// Deliberate mode reads the unique answer block (none when absent or
/// duplicated). Intuitive mode falls back to the last maximal run of
/// digit/minus/degree tokens anywhere in the response.
inline std::optional<TokenSeq> extract_answer(const ParsedResponse& parsed, ReasoningMode mode,
                                              const Vocab& vocab) {
  auto block_content = [&](const Block& b) {
    return TokenSeq(parsed.tokens.begin() + static_cast<std::ptrdiff_t>(b.content.begin),
                    parsed.tokens.begin() + static_cast<std::ptrdiff_t>(b.content.end));
  };

  const Block* answer = nullptr;
  std::size_t answer_count = 0;
  for (const auto& b : parsed.blocks) {
    if (b.tag == Tag::Answer) {
      answer = &b;
      ++answer_count;
    }
  }

  if (mode == ReasoningMode::Deliberate) {
    if (answer_count == 1) return block_content(*answer);
    return std::nullopt;
  }

  // Intuitive: last answer block wins if any, else last numeric-looking run.
  if (answer_count > 0) return block_content(*answer);

  auto numeric_like = [&](Token t) {
    if (vocab.classify(t) == TokenClass::Digit) return true;
    const std::string& s = vocab.token(t);
    return s == "-" || s == "°";
  };
  std::optional<TokenSpan> last;
  std::size_t i = 0;
  while (i < parsed.tokens.size()) {
    if (!numeric_like(parsed.tokens[i])) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    while (i < parsed.tokens.size() && numeric_like(parsed.tokens[i])) ++i;
    TokenSpan run{begin, i};
    // degree/minus-only runs carry no digits and are not answers
    bool has_digit = false;
    for (std::size_t k = run.begin; k < run.end; ++k)
      if (vocab.classify(parsed.tokens[k]) == TokenClass::Digit) has_digit = true;
    if (has_digit) last = run;
  }
  if (!last) return std::nullopt;
  return TokenSeq(parsed.tokens.begin() + static_cast<std::ptrdiff_t>(last->begin),
                  parsed.tokens.begin() + static_cast<std::ptrdiff_t>(last->end));
}

namespace detail {

/// Degree tokens dropped, '-' and digits concatenated, parsed as an integer.
inline std::optional<long> span_to_integer(const TokenSeq& span, const Vocab& vocab) {
  std::string digits;
  for (Token t : span) {
    const std::string& s = vocab.token(t);
    if (s == "°") continue;
    if (vocab.classify(t) == TokenClass::Digit || s == "-") digits += s;
    else return std::nullopt;
  }
  if (digits.empty() || digits == "-") return std::nullopt;
  std::size_t start = digits[0] == '-' ? 1 : 0;
  if (digits.find('-', start) != std::string::npos) return std::nullopt;
  if (digits.size() - start > 9) return std::nullopt;  // out of answer range anyway
  return std::stol(digits);
}

inline std::string casefold_join(const TokenSeq& span, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < span.size(); ++i) {
    if (i > 0) out.push_back(' ');
    for (char ch : vocab.token(span[i]))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

}  // namespace detail

/// Exact integer match for Numeric golds (degree tokens and spacing ignored),
/// case-folded string match for Symbolic golds. Missing answers score 0.
inline double accuracy_reward(const std::optional<TokenSeq>& predicted, const GoldAnswer& gold,
                              const Vocab& vocab) {
  if (!predicted) return 0.0;
  if (gold.kind == GoldKind::Numeric) {
    auto value = detail::span_to_integer(*predicted, vocab);
    return value && *value == gold.numeric ? 1.0 : 0.0;
  }
  std::string folded_gold;
  for (char ch : gold.symbolic)
    folded_gold.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return detail::casefold_join(*predicted, vocab) == folded_gold ? 1.0 : 0.0;
}

/// The rule-based reward: weighted sum of the binary format and accuracy
/// components (plain average at default weights).
inline RewardBreakdown combined_reward(const TokenSeq& response, const FormatSpec& spec,
                                       const GoldAnswer& gold, ReasoningMode mode,
                                       const Vocab& vocab,
                                       const RewardWeights& weights = RewardWeights{}) {
  ParsedResponse parsed = parse_tagged(response, vocab);
  RewardBreakdown out;
  out.format = validate(parsed, spec, vocab).ok ? 1.0 : 0.0;
  out.accuracy = accuracy_reward(extract_answer(parsed, mode, vocab), gold, vocab);
  out.total = weights.format * out.format + weights.accuracy * out.accuracy;
  return out;
}

}  // namespace d2i
