#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "d2i/grammar.hpp"
#include "d2i/grpo.hpp"
#include "d2i/rng.hpp"
#include "d2i/vocab.hpp"

namespace d2i {

using Vector = Eigen::VectorXd;

/// Weight table of the linear-softmax policy, shape feature_dim x vocab_size.
struct PolicyParams {
  Matrix weights;

  int feature_dim() const { return static_cast<int>(weights.rows()); }
  int vocab_size() const { return static_cast<int>(weights.cols()); }

  static PolicyParams zero(int feature_dim, int vocab_size) {
    return {Matrix::Zero(feature_dim, vocab_size)};
  }
};

/// Deep, independent copy of the parameters (the pi_old / pi_ref role).
inline PolicyParams snapshot(const PolicyParams& params) { return {params.weights}; }

/// Context features for one generation step: one-hot of the previous token
/// (with a reserved begin marker), one-hot of the open tag-stack top,
/// normalized position in the response, and a bag-of-tokens summary of the
/// prompt. All entries lie in [0, 1].
class FeatureExtractor {
 public:
  FeatureExtractor(const Vocab& vocab, int max_response_len)
      : vocab_(&vocab), max_response_len_(max_response_len) {}

  const Vocab& vocab() const { return *vocab_; }
  int max_response_len() const { return max_response_len_; }

  int feature_dim() const { return 2 * vocab_->size() + 8; }

  /// Token counts of the prompt, scaled into [0, 1] with saturation at
  /// kBagSaturation occurrences. Length normalization would shrink entries by
  /// the prompt length and starve the bag rows of gradient; saturating below
  /// 16 would erase the count signal of digits that also appear in the 4x4
  /// grid's coordinate labels.
  static constexpr double kBagSaturation = 16.0;

  Vector prompt_bag(std::span<const Token> prompt) const {
    Vector bag = Vector::Zero(vocab_->size());
    for (Token t : prompt) bag[t] += 1.0;
    for (int v = 0; v < vocab_->size(); ++v) bag[v] = std::min(1.0, bag[v] / kBagSaturation);
    return bag;
  }

  /// prev < 0 means the reserved begin marker (empty prefix).
  Vector step_features(const Vector& bag, Token prev, std::optional<Tag> stack_top,
                       std::size_t position) const {
    const int v = vocab_->size();
    Vector f = Vector::Zero(feature_dim());
    f[prev >= 0 ? prev : v] = 1.0;
    f[v + 1 + stack_index(stack_top)] = 1.0;
    f[v + 7] = std::min(1.0, static_cast<double>(position) /
                                 static_cast<double>(max_response_len_));
    f.segment(v + 8, v) = bag;
    return f;
  }

  /// Pure form used by contracts and tests; the samplers keep the tag stack
  /// incrementally and must agree with this.
  Vector features(std::span<const Token> prompt, std::span<const Token> prefix) const {
    ParsedResponse parsed = parse_tagged(TokenSeq(prefix.begin(), prefix.end()), *vocab_);
    std::optional<Tag> top;
    if (!parsed.open_stack.empty()) top = parsed.open_stack.back();
    Token prev = prefix.empty() ? -1 : prefix.back();
    return step_features(prompt_bag(prompt), prev, top, prefix.size());
  }

  static int stack_index(std::optional<Tag> top) {
    if (!top) return 0;
    switch (*top) {
      case Tag::Think: return 1;
      case Tag::Box: return 2;
      case Tag::Crucial: return 3;
      case Tag::Parse: return 4;
      case Tag::Answer: return 5;
    }
    return 0;
  }

 private:
  const Vocab* vocab_;
  int max_response_len_;
};

/// Tracks the open-tag stack the same way parse_tagged does: a closer pops
/// only a matching innermost opener and is otherwise ignored.
class TagStackTracker {
 public:
  explicit TagStackTracker(const Vocab& vocab) : vocab_(&vocab) {}

  void push(Token t) {
    TokenClass cls = vocab_->classify(t);
    if (cls == TokenClass::TagOpen) {
      stack_.push_back(*vocab_->tag_of(t));
    } else if (cls == TokenClass::TagClose) {
      if (!stack_.empty() && stack_.back() == *vocab_->tag_of(t)) stack_.pop_back();
    }
  }

  std::optional<Tag> top() const {
    if (stack_.empty()) return std::nullopt;
    return stack_.back();
  }

 private:
  const Vocab* vocab_;
  std::vector<Tag> stack_;
};

namespace detail {

/// Log-softmax of weights^T f / temperature, numerically stabilized.
inline Vector step_log_distribution(const PolicyParams& params, const Vector& feats,
                                    double temperature) {
  Vector logits = (params.weights.transpose() * feats) / temperature;
  double m = logits.maxCoeff();
  double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

}  // namespace detail

/// softmax(weights^T feats / temperature); strictly positive, sums to one.
inline Vector step_distribution(const PolicyParams& params, const Vector& feats,
                                double temperature) {
  return detail::step_log_distribution(params, feats, temperature).array().exp();
}

struct SampledResponse {
  TokenSeq tokens;
  std::vector<double> logps;  // aligned with tokens
};

/// Autoregressive sampling at the configured temperature until the end
/// marker or max_response_len. The end marker terminates sampling and is not
/// part of the returned response; recorded log-probs cover exactly the
/// returned tokens.
inline SampledResponse sample_response(const PolicyParams& params,
                                       const FeatureExtractor& extractor,
                                       std::span<const Token> prompt, const GrpoConfig& cfg,
                                       Rng& rng) {
  SampledResponse out;
  const Vector bag = extractor.prompt_bag(prompt);
  TagStackTracker stack(extractor.vocab());
  const std::optional<Token> end = extractor.vocab().end_id();
  Token prev = -1;
  for (int pos = 0; pos < cfg.max_response_len; ++pos) {
    Vector f = extractor.step_features(bag, prev, stack.top(), static_cast<std::size_t>(pos));
    Vector logp = detail::step_log_distribution(params, f, cfg.temperature);
    Vector probs = logp.array().exp();
    Token chosen = static_cast<Token>(
        sample_categorical(rng, std::span<const double>(probs.data(),
                                                        static_cast<std::size_t>(probs.size()))));
    if (end && chosen == *end) break;
    out.tokens.push_back(chosen);
    out.logps.push_back(logp[chosen]);
    stack.push(chosen);
    prev = chosen;
  }
  return out;
}

/// Deterministic argmax decode (lowest token id wins ties).
inline TokenSeq greedy_response(const PolicyParams& params, const FeatureExtractor& extractor,
                                std::span<const Token> prompt, const GrpoConfig& cfg) {
  TokenSeq out;
  const Vector bag = extractor.prompt_bag(prompt);
  TagStackTracker stack(extractor.vocab());
  const std::optional<Token> end = extractor.vocab().end_id();
  Token prev = -1;
  for (int pos = 0; pos < cfg.max_response_len; ++pos) {
    Vector f = extractor.step_features(bag, prev, stack.top(), static_cast<std::size_t>(pos));
    Vector logp = detail::step_log_distribution(params, f, cfg.temperature);
    Token chosen = 0;
    for (int v = 1; v < logp.size(); ++v)
      if (logp[v] > logp[chosen]) chosen = static_cast<Token>(v);
    if (end && chosen == *end) break;
    out.push_back(chosen);
    stack.push(chosen);
    prev = chosen;
  }
  return out;
}

/// Per-token log-probabilities of a fixed response under the policy.
inline std::vector<double> sequence_logprobs(const PolicyParams& params,
                                             const FeatureExtractor& extractor,
                                             std::span<const Token> prompt,
                                             std::span<const Token> response,
                                             double temperature) {
  std::vector<double> out;
  out.reserve(response.size());
  const Vector bag = extractor.prompt_bag(prompt);
  TagStackTracker stack(extractor.vocab());
  Token prev = -1;
  for (std::size_t pos = 0; pos < response.size(); ++pos) {
    Vector f = extractor.step_features(bag, prev, stack.top(), pos);
    Vector logp = detail::step_log_distribution(params, f, temperature);
    out.push_back(logp[response[pos]]);
    stack.push(response[pos]);
    prev = response[pos];
  }
  return out;
}

inline double sequence_logprob(const PolicyParams& params, const FeatureExtractor& extractor,
                               std::span<const Token> prompt, std::span<const Token> response,
                               double temperature) {
  double total = 0.0;
  for (double lp : sequence_logprobs(params, extractor, prompt, response, temperature))
    total += lp;
  return total;
}

/// Exact d(sequence_logprob)/d(weights) via the softmax identity: per step,
/// the outer product of the features with (one_hot(chosen) - probs), summed
/// and divided by the temperature.
inline Matrix logprob_gradient(const PolicyParams& params, const FeatureExtractor& extractor,
                               std::span<const Token> prompt, std::span<const Token> response,
                               double temperature) {
  Matrix grad = Matrix::Zero(params.feature_dim(), params.vocab_size());
  const Vector bag = extractor.prompt_bag(prompt);
  TagStackTracker stack(extractor.vocab());
  Token prev = -1;
  for (std::size_t pos = 0; pos < response.size(); ++pos) {
    Vector f = extractor.step_features(bag, prev, stack.top(), pos);
    Vector probs = step_distribution(params, f, temperature);
    Vector delta = -probs;
    delta[response[pos]] += 1.0;
    grad.noalias() += f * delta.transpose();
    stack.push(response[pos]);
    prev = response[pos];
  }
  return grad / temperature;
}

}  // namespace d2i
