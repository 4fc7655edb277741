#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "d2i/errors.hpp"

namespace d2i {

using Token = int;
using TokenSeq = std::vector<Token>;

/// The five tag kinds a response may contain.
enum class Tag { Think, Answer, Box, Crucial, Parse };

inline const char* tag_name(Tag t) {
  switch (t) {
    case Tag::Think: return "think";
    case Tag::Answer: return "answer";
    case Tag::Box: return "box";
    case Tag::Crucial: return "crucial";
    case Tag::Parse: return "parse";
  }
  return "?";
}

enum class TokenClass { TagOpen, TagClose, Digit, Punct, Word, End };

/// Fixed token inventory. Token id = position in the list; the same ids are
/// the policy's output classes, so a vocabulary is immutable once built.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw ConfigError("vocabulary is empty");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw ConfigError("vocabulary has an empty token");
      if (!index_.emplace(tokens_[i], static_cast<Token>(i)).second)
        throw ConfigError("duplicate vocabulary token: " + tokens_[i]);
    }
    classes_.resize(tokens_.size(), TokenClass::Word);
    tag_of_.resize(tokens_.size(), std::nullopt);
    for (Tag t : {Tag::Think, Tag::Answer, Tag::Box, Tag::Crucial, Tag::Parse}) {
      std::string open = std::string("<") + tag_name(t) + ">";
      std::string close = std::string("</") + tag_name(t) + ">";
      auto open_it = index_.find(open);
      auto close_it = index_.find(close);
      if ((open_it == index_.end()) != (close_it == index_.end()))
        throw ConfigError("tag " + open + " lacks its matching opener/closer");
      if (open_it == index_.end()) continue;
      classes_[open_it->second] = TokenClass::TagOpen;
      classes_[close_it->second] = TokenClass::TagClose;
      tag_of_[open_it->second] = t;
      tag_of_[close_it->second] = t;
      open_ids_[static_cast<int>(t)] = open_it->second;
      close_ids_[static_cast<int>(t)] = close_it->second;
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const std::string& s = tokens_[i];
      if (classes_[i] != TokenClass::Word) continue;
      if (s.size() == 1 && s[0] >= '0' && s[0] <= '9') classes_[i] = TokenClass::Digit;
      else if (s == "," || s == "(" || s == ")" || s == "°" || s == "-")
        classes_[i] = TokenClass::Punct;
      else if (s == "<eos>") classes_[i] = TokenClass::End;
    }
    // longest-first match order for the greedy tokenizer
    order_.resize(tokens_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<Token>(i);
    std::sort(order_.begin(), order_.end(), [&](Token a, Token b) {
      return tokens_[a].size() > tokens_[b].size();
    });
  }

  /// The vocabulary this repository ships (also written out as vocab.txt):
  /// ten tag tokens, digits, punctuation, an end marker, and the content
  /// words used by the prompt registry and question templates.
  static const Vocab& canonical() {
    static const Vocab v{{
        "<think>", "</think>", "<answer>", "</answer>", "<box>", "</box>",
        "<crucial>", "</crucial>", "<parse>", "</parse>",
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
        ",", "(", ")", "°", "-", "<eos>",
        "assistant", "give", "reasoning", "first", "then", "final", "answer",
        "think", "inside", "describe", "crucial", "region", "with",
        "coordinate", "parse", "scene", "value", "at", "cell", "plus",
        "double", "what",
    }};
    return v;
  }

  /// One token per line, line number = token id.
  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return Vocab(std::move(tokens));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (const auto& t : tokens_) out << t << "\n";
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(Token id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::optional<Token> id(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Token require(const std::string& s) const {
    auto t = id(s);
    if (!t) throw ConfigError("token not in vocabulary: " + s);
    return *t;
  }

  TokenClass classify(Token id) const { return classes_.at(static_cast<std::size_t>(id)); }
  bool is_tag(Token id) const {
    auto c = classify(id);
    return c == TokenClass::TagOpen || c == TokenClass::TagClose;
  }
  std::optional<Tag> tag_of(Token id) const { return tag_of_.at(static_cast<std::size_t>(id)); }

  bool has_tag(Tag t) const { return open_ids_[static_cast<int>(t)] >= 0; }
  Token open_id(Tag t) const { return open_ids_[static_cast<int>(t)]; }
  Token close_id(Tag t) const { return close_ids_[static_cast<int>(t)]; }

  std::optional<Token> end_id() const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
      if (classes_[i] == TokenClass::End) return static_cast<Token>(i);
    return std::nullopt;
  }

  int digit_value(Token id) const { return tokens_[static_cast<std::size_t>(id)][0] - '0'; }

  /// Greedy longest-match tokenization; whitespace separates units and units
  /// may pack several tokens ("<think>40" -> <think>, 4, 0).
  TokenSeq tokenize(const std::string& text) const {
    TokenSeq out;
    std::size_t i = 0;
    while (i < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[i]))) {
        ++i;
        continue;
      }
      std::size_t end = i;
      while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
      std::size_t pos = i;
      while (pos < end) {
        Token best = -1;
        for (Token cand : order_) {
          const std::string& s = tokens_[static_cast<std::size_t>(cand)];
          if (s.size() <= end - pos && text.compare(pos, s.size(), s) == 0) {
            best = cand;
            break;
          }
        }
        if (best < 0) throw UnknownTokenError(text.substr(pos, end - pos));
        out.push_back(best);
        pos += tokens_[static_cast<std::size_t>(best)].size();
      }
      i = end;
    }
    return out;
  }

  /// Inverse of tokenize up to whitespace normalization.
  std::string detokenize(std::span<const Token> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i > 0) out.push_back(' ');
      out += token(tokens[i]);
    }
    return out;
  }

  /// Renders a non-negative integer as digit tokens (e.g. 140 -> "1","4","0").
  TokenSeq number_tokens(long value) const {
    TokenSeq out;
    if (value < 0) {
      out.push_back(require("-"));
      value = -value;
    }
    std::string s = std::to_string(value);
    for (char ch : s) out.push_back(require(std::string(1, ch)));
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Token> index_;
  std::vector<TokenClass> classes_;
  std::vector<std::optional<Tag>> tag_of_;
  std::vector<Token> order_;
  std::array<Token, 5> open_ids_{-1, -1, -1, -1, -1};
  std::array<Token, 5> close_ids_{-1, -1, -1, -1, -1};
};

}  // namespace d2i
