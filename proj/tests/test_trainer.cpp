#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <regex>

#include "d2i/trainer.hpp"
#include "helpers.hpp"

using namespace d2i;

namespace {

const Vocab& V() { return Vocab::canonical(); }

/// Small, fast config for loop tests.
TrainConfig small_config(const std::string& dataset_path) {
  TrainConfig cfg;
  cfg.grpo.group_size = 4;
  cfg.grpo.max_response_len = 24;
  cfg.grpo.learning_rate = 0.5;
  cfg.steps = 6;
  cfg.batch_prompts = 2;
  cfg.checkpoint_every = 3;
  cfg.seed = 11;
  cfg.dataset = dataset_path;
  return cfg;
}

std::string write_small_dataset(const std::string& path, std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  auto ds = make_dataset(rng, count, 0.75, Difficulty::Easy, V());
  write_instances(path, ds.train);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// wall_time is real elapsed time; determinism comparisons replace its value.
std::string normalize_wall_time(std::string log_text) {
  static const std::regex re("\"wall_time\":[-0-9.eE+]+");
  return std::regex_replace(log_text, re, "\"wall_time\":0");
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str(const std::string& sub = "") const {
    return sub.empty() ? path.string() : (path / sub).string();
  }
};

}  // namespace

TEST_CASE("config file: defaults, overrides and rejection of unknown keys") {
  TempDir dir("trainer_cfg_test");
  std::string path = dir.str("train.cfg");
  {
    std::ofstream out(path);
    out << "# comment line\n"
        << "grpo.group_size = 4\n"
        << "grpo.kl_beta = 0.02\n"
        << "train.strategy = jus   # trailing comment\n"
        << "train.steps = 12\n"
        << "train.dataset = data/train.jsonl\n";
  }
  TrainConfig cfg = train_config_from_file(path);
  REQUIRE(cfg.grpo.group_size == 4);
  REQUIRE(cfg.grpo.kl_beta == 0.02);
  REQUIRE(cfg.grpo.clip_epsilon == 0.2);  // untouched default
  REQUIRE(cfg.strategy == StrategyKind::Jus);
  REQUIRE(cfg.steps == 12);
  REQUIRE(cfg.dataset == "data/train.jsonl");

  TrainConfig cfg2;
  REQUIRE_THROWS_AS(set_config_key(cfg2, "train.nonsense", "1"), ConfigError);
  REQUIRE_THROWS_AS(set_config_key(cfg2, "train.steps", "abc"), ConfigError);
  REQUIRE_THROWS_AS(set_config_key(cfg2, "grpo.kl_in_clip", "maybe"), ConfigError);
}

TEST_CASE("config invariants are enforced") {
  TrainConfig cfg;
  cfg.dataset = "x";
  cfg.steps = 0;
  REQUIRE_THROWS_AS(cfg.check(), ConfigError);
  cfg.steps = 1;
  cfg.grpo.clip_epsilon = 1.5;
  REQUIRE_THROWS_AS(cfg.check(), ConfigError);
  cfg.grpo.clip_epsilon = 0.2;
  cfg.grpo.std_floor = 1e-3;  // above the 1e-6 cap
  REQUIRE_THROWS_AS(cfg.check(), ConfigError);
  cfg.grpo.std_floor = 1e-8;
  cfg.reward.format = 0.8;
  cfg.reward.accuracy = 0.8;
  REQUIRE_THROWS_AS(cfg.check(), ConfigError);
}

TEST_CASE("config digest: stable, strategy-sensitive") {
  TrainConfig a, b;
  REQUIRE(config_digest(a) == config_digest(b));
  b.strategy = StrategyKind::Loc;
  REQUIRE(config_digest(a) != config_digest(b));
  b = a;
  b.workers = 8;  // execution detail, excluded from the digest
  REQUIRE(config_digest(a) == config_digest(b));
}

TEST_CASE("checkpoint: JSON round trip is exact") {
  Rng rng(21);
  Checkpoint ck;
  ck.step = 17;
  ck.policy = d2i::testing::random_params(rng, 6, 5, 1.3);
  ck.reference = d2i::testing::random_params(rng, 6, 5, 0.7);
  ck.config_digest = "abc123";
  ck.rng_state = rng_state_to_string(rng);

  TempDir dir("trainer_ckpt_test");
  std::string path = dir.str("ck.json");
  write_checkpoint(ck, path);
  Checkpoint loaded = read_checkpoint(path);
  REQUIRE(loaded.format_version == "1");
  REQUIRE(loaded.step == 17);
  REQUIRE(loaded.config_digest == "abc123");
  REQUIRE(loaded.rng_state == ck.rng_state);
  REQUIRE((loaded.policy.weights - ck.policy.weights).norm() == 0.0);
  REQUIRE((loaded.reference.weights - ck.reference.weights).norm() == 0.0);
  REQUIRE_THROWS_AS(read_checkpoint(dir.str("missing.json")), IoError);
}

TEST_CASE("train_step: zero reward weights hit the zero-update fixed point") {
  TempDir dir("trainer_fixed_point");
  write_small_dataset(dir.str("train.jsonl"), 3, 12);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));
  cfg.reward.format = 0.0;
  cfg.reward.accuracy = 0.0;  // every response scores 0: advantages all zero
  cfg.grpo.kl_beta = 0.0;

  auto instances = read_instances(cfg.dataset, V());
  FeatureExtractor ex(V(), cfg.grpo.max_response_len);
  PolicyParams policy = PolicyParams::zero(ex.feature_dim(), V().size());
  PolicyParams reference = snapshot(policy);
  auto registry = PromptRegistry::standard(V());
  Rng master(1);

  Matrix before = policy.weights;
  auto rec = train_step(policy, reference, std::span(instances.data(), 2), cfg, registry, ex,
                        master);
  REQUIRE((policy.weights - before).norm() == 0.0);
  REQUIRE(rec.mean_total_reward == 0.0);
  REQUIRE(rec.grad_norm == 0.0);
}

TEST_CASE("train_step: telemetry bounds") {
  TempDir dir("trainer_bounds");
  write_small_dataset(dir.str("train.jsonl"), 5, 12);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));
  auto instances = read_instances(cfg.dataset, V());
  FeatureExtractor ex(V(), cfg.grpo.max_response_len);
  PolicyParams policy = PolicyParams::zero(ex.feature_dim(), V().size());
  PolicyParams reference = snapshot(policy);
  auto registry = PromptRegistry::standard(V());
  Rng master(2);
  for (int step = 0; step < 3; ++step) {
    auto rec = train_step(policy, reference, std::span(instances.data(), 2), cfg, registry, ex,
                          master);
    for (double m : {rec.mean_total_reward, rec.mean_format_reward, rec.mean_accuracy_reward}) {
      REQUIRE(m >= 0.0);
      REQUIRE(m <= 1.0);
    }
    REQUIRE(rec.clip_fraction >= 0.0);
    REQUIRE(rec.clip_fraction <= 1.0);
    REQUIRE(rec.mean_kl >= 0.0);
    REQUIRE(std::isfinite(rec.grad_norm));
  }
}

TEST_CASE("old-policy log-probs stay constant across inner epochs") {
  TempDir dir("trainer_oldpolicy");
  write_small_dataset(dir.str("train.jsonl"), 7, 12);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));
  cfg.grpo.inner_epochs = 3;
  auto instances = read_instances(cfg.dataset, V());
  FeatureExtractor ex(V(), cfg.grpo.max_response_len);
  Rng rng(3);
  PolicyParams policy = d2i::testing::random_params(rng, ex.feature_dim(), V().size(), 0.1);
  PolicyParams reference = PolicyParams::zero(ex.feature_dim(), V().size());
  PolicyParams old_copy = snapshot(policy);
  auto registry = PromptRegistry::standard(V());

  std::vector<std::uint64_t> seeds{101, 102};
  Rollouts rollouts = collect_rollouts(policy, reference, std::span(instances.data(), 2), cfg,
                                       registry, ex, seeds);
  std::vector<std::vector<std::vector<double>>> stored_old;
  for (const auto& g : rollouts.groups) stored_old.push_back(g.logp_old);

  apply_updates(policy, rollouts, cfg, ex);
  REQUIRE((policy.weights - old_copy.weights).norm() > 0.0);

  for (std::size_t g = 0; g < rollouts.groups.size(); ++g) {
    for (std::size_t i = 0; i < rollouts.groups[g].size(); ++i) {
      // recompute under the snapshot: must equal the stored sampling-time values
      auto recomputed = sequence_logprobs(old_copy, ex, rollouts.prompts[g],
                                          rollouts.groups[g].responses[i],
                                          cfg.grpo.temperature);
      REQUIRE(recomputed == stored_old[g][i]);
      REQUIRE(rollouts.groups[g].logp_old[i] == stored_old[g][i]);
    }
  }
}

TEST_CASE("run_training: deterministic logs and checkpoints") {
  TempDir dir("trainer_determinism");
  write_small_dataset(dir.str("train.jsonl"), 9, 16);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));

  run_training(cfg, V(), dir.str("run_a"));
  run_training(cfg, V(), dir.str("run_b"));

  REQUIRE(normalize_wall_time(slurp(dir.str("run_a/log.jsonl"))) ==
          normalize_wall_time(slurp(dir.str("run_b/log.jsonl"))));
  REQUIRE(slurp(dir.str("run_a/" + checkpoint_filename(3))) ==
          slurp(dir.str("run_b/" + checkpoint_filename(3))));
  REQUIRE(slurp(dir.str("run_a/" + checkpoint_filename(6))) ==
          slurp(dir.str("run_b/" + checkpoint_filename(6))));
}

TEST_CASE("run_training: worker fan-out changes nothing") {
  TempDir dir("trainer_workers");
  write_small_dataset(dir.str("train.jsonl"), 13, 16);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));
  cfg.steps = 3;
  run_training(cfg, V(), dir.str("run_serial"));
  cfg.workers = 4;
  run_training(cfg, V(), dir.str("run_parallel"));
  REQUIRE(normalize_wall_time(slurp(dir.str("run_serial/log.jsonl"))) ==
          normalize_wall_time(slurp(dir.str("run_parallel/log.jsonl"))));
}

TEST_CASE("run_training: resume reproduces the uninterrupted tail") {
  TempDir dir("trainer_resume");
  write_small_dataset(dir.str("train.jsonl"), 17, 16);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));

  run_training(cfg, V(), dir.str("full"));
  run_training(cfg, V(), dir.str("resumed"), dir.str("full/" + checkpoint_filename(3)));

  std::string full_log = normalize_wall_time(slurp(dir.str("full/log.jsonl")));
  std::string resumed_log = normalize_wall_time(slurp(dir.str("resumed/log.jsonl")));
  // records 4..6 of the full run are exactly the resumed run's records
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = full_log.find('\n', pos) + 1;
  REQUIRE(full_log.substr(pos) == resumed_log);
  REQUIRE(slurp(dir.str("full/" + checkpoint_filename(6))) ==
          slurp(dir.str("resumed/" + checkpoint_filename(6))));
}

TEST_CASE("run_training: guards") {
  TempDir dir("trainer_guards");
  write_small_dataset(dir.str("train.jsonl"), 19, 12);
  TrainConfig cfg = small_config(dir.str("train.jsonl"));
  cfg.steps = 0;
  REQUIRE_THROWS_AS(run_training(cfg, V(), dir.str("out")), ConfigError);
  cfg.steps = 2;
  cfg.dataset = dir.str("missing.jsonl");
  REQUIRE_THROWS_AS(run_training(cfg, V(), dir.str("out")), IoError);

  // resuming under a different config is rejected
  cfg.dataset = dir.str("train.jsonl");
  cfg.steps = 6;
  auto result = run_training(cfg, V(), dir.str("base_run"));
  TrainConfig other = cfg;
  other.grpo.kl_beta = 0.123;
  REQUIRE_THROWS_AS(
      run_training(other, V(), dir.str("bad_resume"), result.final_checkpoint_path),
      ConfigError);
}

TEST_CASE("format-only ablation reaches 0.9 format reward") {
  // accuracy weight zeroed: only the structural signal drives learning.
  // The step budget was calibrated on the first passing run and frozen.
  TempDir dir("trainer_format_ablation");
  write_small_dataset(dir.str("train.jsonl"), 29, 16);

  TrainConfig cfg;
  cfg.dataset = dir.str("train.jsonl");
  cfg.reward.format = 0.5;
  cfg.reward.accuracy = 0.0;
  cfg.grpo.max_response_len = 24;
  cfg.steps = 120;
  cfg.batch_prompts = 4;
  cfg.seed = 29;
  cfg.strategy = StrategyKind::Base;

  auto instances = read_instances(cfg.dataset, V());
  FeatureExtractor ex(V(), cfg.grpo.max_response_len);
  PolicyParams policy = PolicyParams::zero(ex.feature_dim(), V().size());
  PolicyParams reference = snapshot(policy);
  auto registry = PromptRegistry::standard(V());
  Rng master(mix64(cfg.seed, 0x7a41d2e5ULL));
  auto schedule = build_schedule(instances.size(), cfg.steps, cfg.batch_prompts, cfg.seed);

  double best = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<PromptInstance> batch;
    for (std::size_t idx : schedule[static_cast<std::size_t>(step)])
      batch.push_back(instances[idx]);
    auto rec = train_step(policy, reference, batch, cfg, registry, ex, master);
    best = std::max(best, rec.mean_format_reward);
  }
  REQUIRE(best >= 0.9);
}

TEST_CASE("training improves the mean reward on a fixed batch") {
  // beta = 0, a clearly learnable signal: the reward curve of this seeded
  // run was recorded once and acts as a regression bound
  TempDir dir("trainer_progress");
  Rng rng(23);
  auto ds = make_dataset(rng, 8, 0.5, Difficulty::Easy, V());
  write_instances(dir.str("train.jsonl"), ds.train);

  TrainConfig cfg;
  cfg.dataset = dir.str("train.jsonl");
  cfg.grpo.group_size = 8;
  cfg.grpo.kl_beta = 0.0;
  cfg.grpo.learning_rate = 0.5;
  cfg.grpo.max_response_len = 24;
  cfg.steps = 50;
  cfg.batch_prompts = 4;  // the whole train split every step
  cfg.seed = 23;

  auto instances = read_instances(cfg.dataset, V());
  FeatureExtractor ex(V(), cfg.grpo.max_response_len);
  PolicyParams policy = PolicyParams::zero(ex.feature_dim(), V().size());
  PolicyParams reference = snapshot(policy);
  auto registry = PromptRegistry::standard(V());
  Rng master(mix64(cfg.seed, 0x7a41d2e5ULL));

  std::vector<double> curve;
  for (int step = 0; step < cfg.steps; ++step) {
    auto rec = train_step(policy, reference, instances, cfg, registry, ex, master);
    curve.push_back(rec.mean_total_reward);
  }
  double first = curve.front();
  double last = curve.back();
  REQUIRE(last > first + 0.2);  // frozen regression bound from the recorded run
  // the curve trend is non-decreasing within a small tolerance window
  double running_max = 0.0;
  for (double v : curve) {
    REQUIRE(v >= running_max - 0.15);
    running_max = std::max(running_max, v);
  }
}
