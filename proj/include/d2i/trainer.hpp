#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "d2i/env.hpp"
#include "d2i/errors.hpp"
#include "d2i/grpo.hpp"
#include "d2i/log.hpp"
#include "d2i/parallel.hpp"
#include "d2i/policy.hpp"
#include "d2i/reward.hpp"
#include "d2i/rng.hpp"
#include "d2i/sha256.hpp"

namespace d2i {

struct TrainConfig {
  GrpoConfig grpo;
  RewardWeights reward;
  StrategyKind strategy = StrategyKind::Base;
  int steps = 300;
  int batch_prompts = 8;
  std::uint64_t seed = 1;
  int checkpoint_every = 100;
  std::string dataset;  // train-split JSONL
  int workers = 1;

  void check() const {
    grpo.check();
    if (steps < 1) throw ConfigError("train.steps must be at least 1");
    if (batch_prompts < 1) throw ConfigError("train.batch_prompts must be at least 1");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be at least 1");
    if (workers < 1) throw ConfigError("train.workers must be at least 1");
    if (reward.format < 0.0 || reward.accuracy < 0.0 ||
        reward.format + reward.accuracy > 1.0 + 1e-12)
      throw ConfigError("reward weights must be non-negative and sum to at most 1");
  }
};

struct TrainLogRecord {
  int step = 0;
  double mean_total_reward = 0.0;
  double mean_format_reward = 0.0;
  double mean_accuracy_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;  // seconds spent in this step
};

inline nlohmann::json log_record_to_json(const TrainLogRecord& r) {
  return nlohmann::json{{"step", r.step},
                        {"mean_total_reward", r.mean_total_reward},
                        {"mean_format_reward", r.mean_format_reward},
                        {"mean_accuracy_reward", r.mean_accuracy_reward},
                        {"mean_kl", r.mean_kl},
                        {"clip_fraction", r.clip_fraction},
                        {"grad_norm", r.grad_norm},
                        {"wall_time", r.wall_time}};
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got \"" + v + "\"");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got \"" + v + "\"");
  }
}

inline double parse_doubleval(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got \"" + v + "\"");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got \"" + v + "\"");
}

}  // namespace detail

/// Applies one flat dotted key to the config; shared by the file parser and
/// the CLI flag overrides.
inline void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "grpo.group_size") cfg.grpo.group_size = parse_int(key, value);
  else if (key == "grpo.clip_epsilon") cfg.grpo.clip_epsilon = parse_doubleval(key, value);
  else if (key == "grpo.kl_beta") cfg.grpo.kl_beta = parse_doubleval(key, value);
  else if (key == "grpo.std_floor") cfg.grpo.std_floor = parse_doubleval(key, value);
  else if (key == "grpo.kl_in_clip") cfg.grpo.kl_in_clip = parse_bool(key, value);
  else if (key == "grpo.inner_epochs") cfg.grpo.inner_epochs = parse_int(key, value);
  else if (key == "grpo.learning_rate") cfg.grpo.learning_rate = parse_doubleval(key, value);
  else if (key == "grpo.max_response_len") cfg.grpo.max_response_len = parse_int(key, value);
  else if (key == "grpo.temperature") cfg.grpo.temperature = parse_doubleval(key, value);
  else if (key == "grpo.sample_std") cfg.grpo.sample_std = parse_bool(key, value);
  else if (key == "reward.format_weight") cfg.reward.format = parse_doubleval(key, value);
  else if (key == "reward.accuracy_weight") cfg.reward.accuracy = parse_doubleval(key, value);
  else if (key == "train.strategy") {
    auto s = strategy_from_name(value);
    if (!s) throw ConfigError("train.strategy: unknown strategy \"" + value + "\"");
    cfg.strategy = *s;
  } else if (key == "train.steps") cfg.steps = parse_int(key, value);
  else if (key == "train.batch_prompts") cfg.batch_prompts = parse_int(key, value);
  else if (key == "train.seed") cfg.seed = parse_u64(key, value);
  else if (key == "train.checkpoint_every") cfg.checkpoint_every = parse_int(key, value);
  else if (key == "train.dataset") cfg.dataset = value;
  else if (key == "train.workers") cfg.workers = parse_int(key, value);
  else throw ConfigError("unknown config key: " + key);
}

/// key = value lines; '#' starts a comment, blank lines ignored.
inline TrainConfig train_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    set_config_key(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

/// Stable text form of the config: sorted dotted keys, shortest round-trip
/// number formatting. Worker count is an execution detail and excluded.
inline std::string canonical_config_string(const TrainConfig& cfg) {
  using detail::format_double;
  std::map<std::string, std::string> kv;
  kv["grpo.group_size"] = std::to_string(cfg.grpo.group_size);
  kv["grpo.clip_epsilon"] = format_double(cfg.grpo.clip_epsilon);
  kv["grpo.kl_beta"] = format_double(cfg.grpo.kl_beta);
  kv["grpo.std_floor"] = format_double(cfg.grpo.std_floor);
  kv["grpo.kl_in_clip"] = cfg.grpo.kl_in_clip ? "true" : "false";
  kv["grpo.inner_epochs"] = std::to_string(cfg.grpo.inner_epochs);
  kv["grpo.learning_rate"] = format_double(cfg.grpo.learning_rate);
  kv["grpo.max_response_len"] = std::to_string(cfg.grpo.max_response_len);
  kv["grpo.temperature"] = format_double(cfg.grpo.temperature);
  kv["grpo.sample_std"] = cfg.grpo.sample_std ? "true" : "false";
  kv["reward.format_weight"] = format_double(cfg.reward.format);
  kv["reward.accuracy_weight"] = format_double(cfg.reward.accuracy);
  kv["train.strategy"] = strategy_name(cfg.strategy);
  kv["train.steps"] = std::to_string(cfg.steps);
  kv["train.batch_prompts"] = std::to_string(cfg.batch_prompts);
  kv["train.seed"] = std::to_string(cfg.seed);
  kv["train.checkpoint_every"] = std::to_string(cfg.checkpoint_every);
  kv["train.dataset"] = cfg.dataset;
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

inline std::string config_digest(const TrainConfig& cfg) {
  return sha256_hex(canonical_config_string(cfg));
}

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
  std::string format_version = "1";
  int step = 0;
  PolicyParams policy;
  PolicyParams reference;
  std::string config_digest;
  std::string rng_state;
};

inline nlohmann::json params_to_json(const PolicyParams& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < p.weights.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < p.weights.cols(); ++c) row.push_back(p.weights(r, c));
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"feature_dim", p.feature_dim()},
                        {"vocab_size", p.vocab_size()},
                        {"weights", std::move(rows)}};
}

inline PolicyParams params_from_json(const nlohmann::json& j) {
  int f = j.at("feature_dim").get<int>();
  int v = j.at("vocab_size").get<int>();
  if (f <= 0 || v <= 0) throw ConfigError("checkpoint has non-positive parameter shape");
  PolicyParams p = PolicyParams::zero(f, v);
  const auto& rows = j.at("weights");
  if (rows.size() != static_cast<std::size_t>(f))
    throw ConfigError("checkpoint weight row count does not match feature_dim");
  for (int r = 0; r < f; ++r) {
    const auto& row = rows.at(static_cast<std::size_t>(r));
    if (row.size() != static_cast<std::size_t>(v))
      throw ConfigError("checkpoint weight column count does not match vocab_size");
    for (int c = 0; c < v; ++c)
      p.weights(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return p;
}

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json j{{"format_version", ck.format_version},
                   {"step", ck.step},
                   {"policy", params_to_json(ck.policy)},
                   {"reference", params_to_json(ck.reference)},
                   {"config_digest", ck.config_digest},
                   {"rng_state", ck.rng_state}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoError("failed while writing checkpoint: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed checkpoint JSON: " + path);
  Checkpoint ck;
  ck.format_version = j.at("format_version").get<std::string>();
  if (ck.format_version != "1")
    throw ConfigError("unsupported checkpoint format_version: " + ck.format_version);
  ck.step = j.at("step").get<int>();
  ck.policy = params_from_json(j.at("policy"));
  ck.reference = params_from_json(j.at("reference"));
  ck.config_digest = j.at("config_digest").get<std::string>();
  ck.rng_state = j.at("rng_state").get<std::string>();
  return ck;
}

// --- initial policy ------------------------------------------------------------

namespace detail {

inline Token random_word(Rng& rng, const Vocab& vocab) {
  for (;;) {
    Token t = static_cast<Token>(uniform_below(rng, static_cast<std::uint64_t>(vocab.size())));
    if (vocab.classify(t) == TokenClass::Word) return t;
  }
}

inline Token random_digit(Rng& rng, const Vocab& vocab) {
  return vocab.require(std::string(1, static_cast<char>('0' + uniform_int(rng, 0, 9))));
}

/// Digit count of the demo answer, matched to the magnitude range of the
/// demo prompt's rule. The digits themselves stay random, so the fit learns
/// "how long an answer of this kind is", never "what the answer is".
inline int demo_answer_digits(Rng& rng, Rule rule) {
  switch (rule) {
    case Rule::Identity: return 1;
    case Rule::AddConst: return 2;
    case Rule::Double: return uniform_int(rng, 1, 2);
    case Rule::Complement180: return 3;
  }
  return 1;
}

/// A template-shaped demo response for one strategy. All content is random
/// (words, coordinates, answer digits), so the fit carries no information
/// about any instance's gold answer.
inline TokenSeq demo_response(Rng& rng, StrategyKind strategy, Rule rule, const Vocab& vocab) {
  TokenSeq out;
  auto tag_open = [&](Tag t) { out.push_back(vocab.open_id(t)); };
  auto tag_close = [&](Tag t) { out.push_back(vocab.close_id(t)); };
  auto words = [&](int lo, int hi) {
    int n = uniform_int(rng, lo, hi);
    for (int i = 0; i < n; ++i) out.push_back(random_word(rng, vocab));
  };
  auto digits = [&](int lo, int hi) {
    int n = uniform_int(rng, lo, hi);
    for (int i = 0; i < n; ++i) out.push_back(random_digit(rng, vocab));
  };

  if (strategy == StrategyKind::Par) {
    tag_open(Tag::Parse);
    out.push_back(random_word(rng, vocab));
    out.push_back(vocab.require("("));
    out.push_back(random_word(rng, vocab));
    out.push_back(vocab.require(")"));
    tag_close(Tag::Parse);
  }
  tag_open(Tag::Think);
  words(1, 2);
  if (strategy == StrategyKind::Loc) {
    tag_open(Tag::Box);
    out.push_back(vocab.require("("));
    digits(1, 1);
    out.push_back(vocab.require(","));
    digits(1, 1);
    out.push_back(vocab.require(")"));
    tag_close(Tag::Box);
  }
  tag_close(Tag::Think);
  if (strategy == StrategyKind::Jus) {
    tag_open(Tag::Crucial);
    words(3, 4);
    tag_close(Tag::Crucial);
  }
  tag_open(Tag::Answer);
  int n = demo_answer_digits(rng, rule);
  digits(n, n);
  tag_close(Tag::Answer);
  if (auto end = vocab.end_id()) out.push_back(*end);
  return out;
}

}  // namespace detail

/// The run's initial policy: a light supervised fit on template-shaped demos
/// with random content, standing in for the instruction-tuned base model the
/// full-scale setup starts from. Without it a uniform sampler essentially
/// never hits a complete tag template, so the binary format reward stays
/// identically zero and group-relative advantages give no gradient at all.
/// The fit is deterministic and independent of the training seed; accuracy
/// stays at the guess floor because demo answers are random digits.
inline PolicyParams warm_start_policy(const FeatureExtractor& extractor,
                                      const PromptRegistry& registry, const Vocab& vocab,
                                      int kInstances = 16, int kEpochs = 10,
                                      double kLearningRate = 0.3) {
  constexpr std::uint64_t kInitSeed = 0x57a2717e11ULL;

  Rng rng(kInitSeed);
  PolicyParams params = PolicyParams::zero(extractor.feature_dim(), vocab.size());
  std::vector<std::pair<TokenSeq, TokenSeq>> demos;
  for (int i = 0; i < kInstances; ++i) {
    PromptInstance inst = generate_instance(rng, Difficulty::Easy, static_cast<std::uint64_t>(i),
                                            vocab);
    for (StrategyKind s : {StrategyKind::Base, StrategyKind::Loc, StrategyKind::Jus,
                           StrategyKind::Par}) {
      TokenSeq prompt = render_prompt(inst, s, ReasoningMode::Deliberate, registry, vocab);
      demos.emplace_back(std::move(prompt), detail::demo_response(rng, s, inst.rule, vocab));
    }
  }
  for (int epoch = 0; epoch < kEpochs; ++epoch)
    for (const auto& [prompt, response] : demos)
      params.weights +=
          kLearningRate * logprob_gradient(params, extractor, prompt, response, 1.0);
  return params;
}

// --- rollout collection and updates ------------------------------------------

struct Rollouts {
  std::vector<RolloutGroup> groups;
  std::vector<AdvantageVector> advantages;
  std::vector<TokenSeq> prompts;  // aligned with groups
  double mean_total = 0.0;
  double mean_format = 0.0;
  double mean_accuracy = 0.0;
};

/// Samples group_size responses per prompt under `policy` (the step's old
/// policy), scores them and computes advantages. One seed per group, so the
/// outcome is independent of worker count.
inline Rollouts collect_rollouts(const PolicyParams& policy, const PolicyParams& reference,
                                 std::span<const PromptInstance> batch, const TrainConfig& cfg,
                                 const PromptRegistry& registry,
                                 const FeatureExtractor& extractor,
                                 std::span<const std::uint64_t> seeds) {
  const Vocab& vocab = extractor.vocab();
  const FormatSpec spec = spec_for(cfg.strategy, ReasoningMode::Deliberate);
  const std::size_t b = batch.size();
  Rollouts out;
  out.groups.resize(b);
  out.advantages.resize(b);
  out.prompts.resize(b);

  parallel_for(b, cfg.workers, [&](std::size_t g) {
    Rng rng(seeds[g]);
    const PromptInstance& inst = batch[g];
    TokenSeq prompt = render_prompt(inst, cfg.strategy, ReasoningMode::Deliberate, registry,
                                    vocab);
    RolloutGroup group;
    group.prompt_id = inst.id;
    const int n = cfg.grpo.group_size;
    std::vector<double> totals(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      SampledResponse s = sample_response(policy, extractor, prompt, cfg.grpo, rng);
      RewardBreakdown r = combined_reward(s.tokens, spec, inst.gold, ReasoningMode::Deliberate,
                                          vocab, cfg.reward);
      totals[static_cast<std::size_t>(i)] = r.total;
      group.logp_ref.push_back(
          sequence_logprobs(reference, extractor, prompt, s.tokens, cfg.grpo.temperature));
      group.logp_old.push_back(s.logps);
      group.logp_theta.push_back(std::move(s.logps));
      group.responses.push_back(std::move(s.tokens));
      group.rewards.push_back(r);
    }
    out.advantages[g] = group_advantages(totals, cfg.grpo.std_floor, cfg.grpo.sample_std);
    out.groups[g] = std::move(group);
    out.prompts[g] = std::move(prompt);
  });

  double total = 0.0, format = 0.0, accuracy = 0.0;
  std::size_t count = 0;
  for (const auto& group : out.groups) {
    for (const auto& r : group.rewards) {
      total += r.total;
      format += r.format;
      accuracy += r.accuracy;
      ++count;
    }
  }
  if (count > 0) {
    out.mean_total = total / static_cast<double>(count);
    out.mean_format = format / static_cast<double>(count);
    out.mean_accuracy = accuracy / static_cast<double>(count);
  }
  return out;
}

struct UpdateStats {
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;  // of the last applied batch gradient
};

/// Runs inner_epochs passes of gradient ascent on the surrogate. logp_theta
/// is refreshed from the live policy after the first pass; logp_old and
/// logp_ref stay frozen. Group gradients are reduced in group-index order,
/// so the result does not depend on worker scheduling.
inline UpdateStats apply_updates(PolicyParams& policy, Rollouts& rollouts,
                                 const TrainConfig& cfg, const FeatureExtractor& extractor) {
  const std::size_t b = rollouts.groups.size();
  UpdateStats stats;
  double kl_sum = 0.0;
  std::size_t response_count = 0;
  std::size_t clipped_count = 0;

  for (int epoch = 0; epoch < cfg.grpo.inner_epochs; ++epoch) {
    std::vector<Matrix> group_grads(b);
    std::vector<double> group_kl(b, 0.0);
    std::vector<std::size_t> group_clipped(b, 0);
    parallel_for(b, cfg.workers, [&](std::size_t g) {
      RolloutGroup& group = rollouts.groups[g];
      const TokenSeq& prompt = rollouts.prompts[g];
      const std::size_t n = group.size();
      std::vector<Matrix> logp_grads(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (epoch > 0)
          group.logp_theta[i] = sequence_logprobs(policy, extractor, prompt,
                                                  group.responses[i], cfg.grpo.temperature);
        logp_grads[i] = logprob_gradient(policy, extractor, prompt, group.responses[i],
                                         cfg.grpo.temperature);
        double st = logp_sum(group.logp_theta[i]);
        double so = logp_sum(group.logp_old[i]);
        double sr = logp_sum(group.logp_ref[i]);
        double d = ratio(st, so);
        group_kl[g] += kl_estimate(sr, st);
        if (d < 1.0 - cfg.grpo.clip_epsilon || d > 1.0 + cfg.grpo.clip_epsilon)
          ++group_clipped[g];
      }
      group_grads[g] = objective_gradient(group, rollouts.advantages[g], logp_grads, cfg.grpo);
    });

    Matrix batch_grad = Matrix::Zero(policy.feature_dim(), policy.vocab_size());
    for (std::size_t g = 0; g < b; ++g) {
      if (!group_grads[g].allFinite())
        throw NonFiniteGradientError(std::to_string(rollouts.groups[g].prompt_id));
      batch_grad += group_grads[g];
      kl_sum += group_kl[g];
      clipped_count += group_clipped[g];
      response_count += rollouts.groups[g].size();
    }
    batch_grad /= static_cast<double>(b);
    policy.weights += cfg.grpo.learning_rate * batch_grad;
    stats.grad_norm = batch_grad.norm();
  }

  if (response_count > 0) {
    stats.mean_kl = kl_sum / static_cast<double>(response_count);
    stats.clip_fraction =
        static_cast<double>(clipped_count) / static_cast<double>(response_count);
  }
  return stats;
}

/// One outer GRPO step: snapshot the old policy, roll out the batch under
/// deliberate prompts, score with the rule-based rewards, update.
inline TrainLogRecord train_step(PolicyParams& policy, const PolicyParams& reference,
                                 std::span<const PromptInstance> batch, const TrainConfig& cfg,
                                 const PromptRegistry& registry,
                                 const FeatureExtractor& extractor, Rng& master) {
  if (batch.empty()) throw ConfigError("train_step requires a non-empty batch");
  auto start = std::chrono::steady_clock::now();

  // group seeds are drawn on the calling thread in batch order
  std::vector<std::uint64_t> seeds(batch.size());
  for (auto& s : seeds) s = master();

  PolicyParams old_policy = snapshot(policy);
  Rollouts rollouts =
      collect_rollouts(old_policy, reference, batch, cfg, registry, extractor, seeds);
  UpdateStats stats = apply_updates(policy, rollouts, cfg, extractor);

  TrainLogRecord rec;
  rec.mean_total_reward = rollouts.mean_total;
  rec.mean_format_reward = rollouts.mean_format;
  rec.mean_accuracy_reward = rollouts.mean_accuracy;
  rec.mean_kl = stats.mean_kl;
  rec.clip_fraction = stats.clip_fraction;
  rec.grad_norm = stats.grad_norm;
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// --- the outer loop ----------------------------------------------------------

/// Batch schedule derived from the seed alone: one seeded shuffle per epoch,
/// consecutive slices of batch_prompts (the last slice of an epoch may be
/// short). Resume recomputes the identical schedule.
inline std::vector<std::vector<std::size_t>> build_schedule(std::size_t n_items, int steps,
                                                            int batch_prompts,
                                                            std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> schedule;
  schedule.reserve(static_cast<std::size_t>(steps));
  std::uint64_t epoch = 0;
  while (schedule.size() < static_cast<std::size_t>(steps)) {
    std::vector<std::size_t> order(n_items);
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    Rng rng(mix64(seed, 0x5c4ed01eULL, epoch));
    shuffle_inplace(order, rng);
    for (std::size_t pos = 0;
         pos < n_items && schedule.size() < static_cast<std::size_t>(steps);
         pos += static_cast<std::size_t>(batch_prompts)) {
      std::size_t end = std::min(n_items, pos + static_cast<std::size_t>(batch_prompts));
      schedule.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    ++epoch;
  }
  return schedule;
}

inline std::string checkpoint_filename(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint-%06d.json", step);
  return buf;
}

struct RunResult {
  Checkpoint final_checkpoint;
  std::string log_path;
  std::string final_checkpoint_path;
};

/// Full training run. Writes one JSONL record per step to <out_dir>/log.jsonl
/// and a checkpoint every checkpoint_every steps plus one at completion.
/// Passing resume_path continues from a saved checkpoint; the new log holds
/// the remaining records only.
inline RunResult run_training(const TrainConfig& cfg, const Vocab& vocab,
                              const std::string& out_dir,
                              const std::string& resume_path = "") {
  cfg.check();
  if (!std::filesystem::exists(cfg.dataset))
    throw IoError("train dataset not found: " + cfg.dataset);
  std::vector<PromptInstance> train_set = read_instances(cfg.dataset, vocab);
  if (train_set.empty()) throw ConfigError("train dataset is empty: " + cfg.dataset);

  std::filesystem::create_directories(out_dir);
  const std::string digest = config_digest(cfg);
  const PromptRegistry registry = PromptRegistry::standard(vocab);
  const FeatureExtractor extractor(vocab, cfg.grpo.max_response_len);

  PolicyParams policy = warm_start_policy(extractor, registry, vocab);
  PolicyParams reference = snapshot(policy);
  Rng master(mix64(cfg.seed, 0x7a41d2e5ULL));
  int start_step = 0;

  if (!resume_path.empty()) {
    Checkpoint ck = read_checkpoint(resume_path);
    if (ck.config_digest != digest)
      throw ConfigError("checkpoint config digest does not match the current config");
    if (ck.policy.feature_dim() != extractor.feature_dim() ||
        ck.policy.vocab_size() != vocab.size())
      throw ConfigError("checkpoint parameter shape does not match the vocabulary");
    policy = std::move(ck.policy);
    reference = std::move(ck.reference);
    master = rng_state_from_string(ck.rng_state);
    start_step = ck.step;
    if (start_step >= cfg.steps)
      throw ConfigError("checkpoint is already at or past train.steps");
  }

  auto schedule = build_schedule(train_set.size(), cfg.steps, cfg.batch_prompts, cfg.seed);

  const std::string log_path = out_dir + "/log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write training log: " + log_path);

  RunResult result;
  result.log_path = log_path;
  for (int step = start_step + 1; step <= cfg.steps; ++step) {
    std::vector<PromptInstance> batch;
    for (std::size_t idx : schedule[static_cast<std::size_t>(step - 1)])
      batch.push_back(train_set[idx]);
    TrainLogRecord rec = train_step(policy, reference, batch, cfg, registry, extractor, master);
    rec.step = step;
    log << log_record_to_json(rec).dump() << "\n";
    log.flush();
    if (!log) throw IoError("failed while writing training log: " + log_path);
    log_debug("step %d reward %.3f format %.3f accuracy %.3f", step, rec.mean_total_reward,
              rec.mean_format_reward, rec.mean_accuracy_reward);

    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      Checkpoint ck;
      ck.step = step;
      ck.policy = snapshot(policy);
      ck.reference = snapshot(reference);
      ck.config_digest = digest;
      ck.rng_state = rng_state_to_string(master);
      std::string path = out_dir + "/" + checkpoint_filename(step);
      write_checkpoint(ck, path);
      if (step == cfg.steps) {
        result.final_checkpoint = std::move(ck);
        result.final_checkpoint_path = path;
      }
    }
  }
  return result;
}

}  // namespace d2i
