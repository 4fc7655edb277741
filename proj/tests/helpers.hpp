#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <functional>
#include <string>
#include <vector>

#include "d2i/d2i.hpp"

namespace d2i::testing {

/// Reduced vocabulary for gradient checks: full tag set, two digits, the box
/// punctuation, one word, an end marker. Keeps finite differences cheap.
inline Vocab tiny_vocab() {
  return Vocab({"<think>", "</think>", "<answer>", "</answer>", "<box>", "</box>",
                "<crucial>", "</crucial>", "<parse>", "</parse>", "0", "1", ",", "(", ")",
                "value", "<eos>"});
}

/// A canonical valid deliberate response for each strategy, with the answer
/// digits spliced in.
inline TokenSeq valid_response(StrategyKind strategy, const Vocab& vocab,
                               const std::string& answer = "4 0") {
  switch (strategy) {
    case StrategyKind::Base:
      return vocab.tokenize("<think> value </think> <answer> " + answer + " </answer>");
    case StrategyKind::Loc:
      return vocab.tokenize("<think> value <box> ( 1 , 2 ) </box> value </think> <answer> " +
                            answer + " </answer>");
    case StrategyKind::Jus:
      return vocab.tokenize("<think> value </think> <crucial> crucial region value </crucial> "
                            "<answer> " + answer + " </answer>");
    case StrategyKind::Par:
      return vocab.tokenize("<parse> cell ( value , value ) </parse> <think> value </think> "
                            "<answer> " + answer + " </answer>");
  }
  return {};
}

inline const std::vector<StrategyKind>& all_strategies() {
  static const std::vector<StrategyKind> s{StrategyKind::Base, StrategyKind::Loc,
                                           StrategyKind::Jus, StrategyKind::Par};
  return s;
}

/// Central finite differences of f over every parameter entry.
inline Matrix finite_difference_gradient(PolicyParams& params,
                                         const std::function<double()>& f, double step = 1e-6) {
  Matrix grad(params.weights.rows(), params.weights.cols());
  for (int r = 0; r < params.weights.rows(); ++r) {
    for (int c = 0; c < params.weights.cols(); ++c) {
      double saved = params.weights(r, c);
      params.weights(r, c) = saved + step;
      double hi = f();
      params.weights(r, c) = saved - step;
      double lo = f();
      params.weights(r, c) = saved;
      grad(r, c) = (hi - lo) / (2.0 * step);
    }
  }
  return grad;
}

/// Max-norm relative disagreement between two gradients.
inline double relative_error(const Matrix& a, const Matrix& b) {
  double num = (a - b).cwiseAbs().maxCoeff();
  double den = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  if (den == 0.0) return num;
  return num / den;
}

inline PolicyParams random_params(Rng& rng, int feature_dim, int vocab_size, double scale) {
  PolicyParams p = PolicyParams::zero(feature_dim, vocab_size);
  for (int r = 0; r < feature_dim; ++r)
    for (int c = 0; c < vocab_size; ++c)
      p.weights(r, c) = scale * (2.0 * uniform_double(rng) - 1.0);
  return p;
}

inline TokenSeq random_tokens(Rng& rng, const Vocab& vocab, std::size_t len) {
  TokenSeq out;
  for (std::size_t i = 0; i < len; ++i)
    out.push_back(static_cast<Token>(uniform_below(rng, static_cast<std::uint64_t>(vocab.size()))));
  return out;
}

}  // namespace d2i::testing
