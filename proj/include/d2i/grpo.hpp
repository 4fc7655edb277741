#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "d2i/errors.hpp"
#include "d2i/reward.hpp"
#include "d2i/vocab.hpp"

namespace d2i {

using Matrix = Eigen::MatrixXd;

/// Beyond this many nats, exp() of a log-probability difference is treated
/// as an overflow rather than a usable ratio.
inline constexpr double kRatioOverflowNats = 50.0;

struct GrpoConfig {
  int group_size = 8;         // responses sampled per prompt
  double clip_epsilon = 0.2;  // ratio clip half-width
  double kl_beta = 0.04;      // reference-KL penalty weight
  double std_floor = 1e-8;    // below this group std, advantages are zeroed
  bool kl_in_clip = false;    // true reproduces the penalty inside the min
  int inner_epochs = 1;       // optimizer passes per rollout batch
  double learning_rate = 0.7;
  int max_response_len = 64;
  double temperature = 1.0;
  bool sample_std = false;    // divide by N-1 instead of N in the group std

  void check() const {
    if (group_size < 2) throw ConfigError("grpo.group_size must be at least 2");
    if (!(clip_epsilon > 0.0) || clip_epsilon >= 1.0)
      throw ConfigError("grpo.clip_epsilon must lie in (0, 1)");
    if (kl_beta < 0.0) throw ConfigError("grpo.kl_beta must be non-negative");
    if (!(std_floor > 0.0) || std_floor > 1e-6)
      throw ConfigError("grpo.std_floor must lie in (0, 1e-6]");
    if (inner_epochs < 1) throw ConfigError("grpo.inner_epochs must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("grpo.learning_rate must be positive");
    if (max_response_len < 1) throw ConfigError("grpo.max_response_len must be positive");
    if (!(temperature > 0.0)) throw ConfigError("grpo.temperature must be positive");
  }
};

/// One prompt with its sampled responses and per-token log-probabilities
/// under the current, snapshot and reference policies.
struct RolloutGroup {
  std::uint64_t prompt_id = 0;
  std::vector<TokenSeq> responses;
  std::vector<std::vector<double>> logp_theta;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_ref;
  std::vector<RewardBreakdown> rewards;

  std::size_t size() const { return responses.size(); }
};

inline double logp_sum(const std::vector<double>& per_token) {
  return std::accumulate(per_token.begin(), per_token.end(), 0.0);
}

using AdvantageVector = std::vector<double>;

/// Group-normalized advantages: (r - mean) / std with population std by
/// default. Degenerate groups (std below the floor) yield all zeros.
inline AdvantageVector group_advantages(std::span<const double> rewards, double std_floor,
                                        bool sample_std = false) {
  const std::size_t n = rewards.size();
  if (n < 2) throw GroupTooSmallError(n);
  double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  double denom = sample_std ? static_cast<double>(n - 1) : static_cast<double>(n);
  double sd = std::sqrt(ss / denom);
  AdvantageVector out(n, 0.0);
  if (sd < std_floor) return out;
  for (std::size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

/// exp(logp_theta_sum - logp_old_sum); the likelihood ratio of Eq. (2).
inline double ratio(double logp_theta_sum, double logp_old_sum,
                    double overflow_nats = kRatioOverflowNats) {
  double diff = logp_theta_sum - logp_old_sum;
  if (!std::isfinite(diff) || std::abs(diff) > overflow_nats) throw NonFiniteRatioError(diff);
  return std::exp(diff);
}

/// The nonnegative estimator rho - log(rho) - 1 with rho = pi_ref / pi_theta.
/// Computed from the log difference directly, so deeply negative differences
/// (a sharpened policy far from the uniform reference) stay exact; only the
/// positive direction can overflow exp() and is guarded.
inline double kl_estimate(double logp_ref_sum, double logp_theta_sum,
                          double overflow_nats = kRatioOverflowNats) {
  double diff = logp_ref_sum - logp_theta_sum;
  if (!std::isfinite(diff) || diff > overflow_nats) throw NonFiniteRatioError(diff);
  return std::exp(diff) - diff - 1.0;
}

inline double clip(double d, double lo, double hi) { return std::min(std::max(d, lo), hi); }

/// One response's contribution to the objective. The default form subtracts
/// the KL penalty outside the min; kl_in_clip folds it into the clipped
/// branch, reproducing the objective exactly as printed.
inline double surrogate_term(double d, double advantage, double kl, const GrpoConfig& cfg) {
  double clipped = clip(d, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
  if (cfg.kl_in_clip)
    return std::min(d * advantage, clipped * advantage - cfg.kl_beta * kl);
  return std::min(d * advantage, clipped * advantage) - cfg.kl_beta * kl;
}

/// The clipped surrogate objective with KL penalty, averaged over the group.
inline double surrogate_objective(const RolloutGroup& group, const AdvantageVector& advantages,
                                  const GrpoConfig& cfg) {
  const std::size_t n = group.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double st = logp_sum(group.logp_theta[i]);
    double so = logp_sum(group.logp_old[i]);
    double sr = logp_sum(group.logp_ref[i]);
    double d = ratio(st, so);
    double kl = kl_estimate(sr, st);
    total += surrogate_term(d, advantages[i], kl, cfg);
  }
  return total / static_cast<double>(n);
}

/// Exact gradient of surrogate_objective with respect to the policy
/// parameters; logp_grads[i] must be d(logp_theta_sum of response i)/d(params)
/// and logp_old / logp_ref are treated as constants. Where the min selects
/// the saturated clip value the ratio contributes zero gradient; ties go to
/// the unclipped branch.
inline Matrix objective_gradient(const RolloutGroup& group, const AdvantageVector& advantages,
                                 std::span<const Matrix> logp_grads, const GrpoConfig& cfg) {
  const std::size_t n = group.size();
  Matrix grad = Matrix::Zero(logp_grads.empty() ? 0 : logp_grads[0].rows(),
                             logp_grads.empty() ? 0 : logp_grads[0].cols());
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;
  for (std::size_t i = 0; i < n; ++i) {
    double st = logp_sum(group.logp_theta[i]);
    double so = logp_sum(group.logp_old[i]);
    double sr = logp_sum(group.logp_ref[i]);
    double d = ratio(st, so);
    double kl_diff = sr - st;
    if (!std::isfinite(kl_diff) || kl_diff > kRatioOverflowNats)
      throw NonFiniteRatioError(kl_diff);
    double rho = std::exp(kl_diff);
    double a = advantages[i];
    double clipped = clip(d, lo, hi);
    double kl = rho - kl_diff - 1.0;

    // derivative of the selected min branch through d, as a coefficient on
    // d(logp_theta)/d(params)
    double coeff = 0.0;
    bool in_clip_range = d >= lo && d <= hi;
    if (cfg.kl_in_clip) {
      double branch1 = d * a;
      double branch2 = clipped * a - cfg.kl_beta * kl;
      if (branch1 <= branch2) {
        coeff = a * d;
      } else {
        if (in_clip_range) coeff = a * d;
        coeff += cfg.kl_beta * (rho - 1.0);
      }
    } else {
      double branch1 = d * a;
      double branch2 = clipped * a;
      if (branch1 <= branch2 || in_clip_range) coeff = a * d;
      coeff += cfg.kl_beta * (rho - 1.0);
    }
    if (coeff != 0.0) grad.noalias() += (coeff / static_cast<double>(n)) * logp_grads[i];
  }
  return grad;
}

}  // namespace d2i
