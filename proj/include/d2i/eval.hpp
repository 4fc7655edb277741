#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "d2i/env.hpp"
#include "d2i/errors.hpp"
#include "d2i/parallel.hpp"
#include "d2i/policy.hpp"
#include "d2i/reward.hpp"
#include "d2i/rng.hpp"

namespace d2i {

struct EvalConfig {
  ReasoningMode mode = ReasoningMode::Intuitive;
  StrategyKind strategy = StrategyKind::Base;  // drives prompt/spec in Deliberate mode
  int k_max = 3;                               // samples per item
  bool greedy = false;                         // one argmax decode instead of sampling
  std::uint64_t seed = 1;
  double temperature = 1.0;
  int workers = 1;

  void check() const {
    if (k_max < 1) throw ConfigError("eval k_max must be at least 1");
    if (!(temperature > 0.0)) throw ConfigError("eval temperature must be positive");
    if (workers < 1) throw ConfigError("eval workers must be at least 1");
  }
};

struct ItemRecord {
  std::uint64_t id = 0;
  std::vector<bool> correct;    // per sample
  std::vector<bool> format_ok;  // per sample
  std::string first_response;   // detokenized sample 1
};

struct EvalReport {
  std::size_t n_items = 0;
  ReasoningMode mode = ReasoningMode::Intuitive;
  StrategyKind strategy = StrategyKind::Base;
  int k_max = 1;
  bool greedy = false;
  std::uint64_t seed = 0;
  double accuracy = 0.0;           // sample 1 correct
  double format_compliance = 0.0;  // sample 1 validates
  std::map<int, double> pass_at;   // k -> coverage fraction
  std::vector<ItemRecord> items;
};

/// pass@k = fraction of items with at least one correct answer among the
/// first k samples; non-decreasing in k by construction.
inline std::map<int, double> pass_at_fractions(std::span<const ItemRecord> items, int k_max) {
  std::map<int, double> out;
  if (items.empty()) return out;
  for (int k = 1; k <= k_max; ++k) {
    std::size_t hits = 0;
    for (const auto& item : items) {
      bool any = false;
      for (int s = 0; s < k && s < static_cast<int>(item.correct.size()); ++s)
        if (item.correct[static_cast<std::size_t>(s)]) any = true;
      if (any) ++hits;
    }
    out[k] = static_cast<double>(hits) / static_cast<double>(items.size());
  }
  return out;
}

/// Scores every item under the configured reasoning mode: accuracy and
/// format compliance from sample 1, pass@k over the first k samples. Each
/// item draws from its own seeded stream, so reports are deterministic and
/// independent of worker count.
inline EvalReport evaluate(const PolicyParams& params, const FeatureExtractor& extractor,
                           std::span<const PromptInstance> items, const EvalConfig& cfg,
                           const PromptRegistry& registry) {
  cfg.check();
  if (items.empty()) throw EmptyTestSetError();
  const Vocab& vocab = extractor.vocab();
  const FormatSpec spec = spec_for(cfg.strategy, cfg.mode);
  const int samples = cfg.greedy ? 1 : cfg.k_max;

  GrpoConfig sampler;
  sampler.temperature = cfg.temperature;
  sampler.max_response_len = extractor.max_response_len();

  EvalReport report;
  report.n_items = items.size();
  report.mode = cfg.mode;
  report.strategy = cfg.strategy;
  report.k_max = samples;
  report.greedy = cfg.greedy;
  report.seed = cfg.seed;
  report.items.resize(items.size());

  parallel_for(items.size(), cfg.workers, [&](std::size_t i) {
    const PromptInstance& inst = items[i];
    TokenSeq prompt = render_prompt(inst, cfg.strategy, cfg.mode, registry, vocab);
    Rng rng(mix64(cfg.seed, 0xea11ab1eULL, inst.id));
    ItemRecord rec;
    rec.id = inst.id;
    for (int s = 0; s < samples; ++s) {
      TokenSeq tokens = cfg.greedy ? greedy_response(params, extractor, prompt, sampler)
                                   : sample_response(params, extractor, prompt, sampler, rng)
                                         .tokens;
      RewardBreakdown r = combined_reward(tokens, spec, inst.gold, cfg.mode, vocab);
      rec.correct.push_back(r.accuracy == 1.0);
      rec.format_ok.push_back(r.format == 1.0);
      if (s == 0) rec.first_response = vocab.detokenize(tokens);
    }
    report.items[i] = std::move(rec);
  });

  std::size_t correct1 = 0, valid1 = 0;
  for (const auto& rec : report.items) {
    if (rec.correct[0]) ++correct1;
    if (rec.format_ok[0]) ++valid1;
  }
  report.accuracy = static_cast<double>(correct1) / static_cast<double>(items.size());
  report.format_compliance = static_cast<double>(valid1) / static_cast<double>(items.size());
  report.pass_at = pass_at_fractions(report.items, samples);
  return report;
}

/// D2D vs D2I on identical items and seeds; deltas are intuitive minus
/// deliberate. The delta direction is reported, never asserted.
struct PairedReport {
  EvalReport deliberate;
  EvalReport intuitive;
  double accuracy_delta = 0.0;
  std::map<int, double> pass_at_delta;
};

inline PairedReport compare_modes(const PolicyParams& params, const FeatureExtractor& extractor,
                                  std::span<const PromptInstance> items, StrategyKind strategy,
                                  int k_max, std::uint64_t seed, const PromptRegistry& registry,
                                  int workers = 1) {
  EvalConfig cfg;
  cfg.strategy = strategy;
  cfg.k_max = k_max;
  cfg.seed = seed;
  cfg.workers = workers;

  cfg.mode = ReasoningMode::Deliberate;
  PairedReport out;
  out.deliberate = evaluate(params, extractor, items, cfg, registry);
  cfg.mode = ReasoningMode::Intuitive;
  out.intuitive = evaluate(params, extractor, items, cfg, registry);

  for (std::size_t i = 0; i < out.deliberate.items.size(); ++i)
    if (out.deliberate.items[i].id != out.intuitive.items[i].id)
      throw Error("paired evaluation item ids diverged");

  out.accuracy_delta = out.intuitive.accuracy - out.deliberate.accuracy;
  for (const auto& [k, v] : out.intuitive.pass_at)
    out.pass_at_delta[k] = v - out.deliberate.pass_at.at(k);
  return out;
}

// --- JSON serialization --------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json pass = nlohmann::json::object();
  for (const auto& [k, v] : r.pass_at) pass[std::to_string(k)] = v;
  return nlohmann::json{{"n_items", r.n_items},
                        {"mode", mode_name(r.mode)},
                        {"strategy", strategy_name(r.strategy)},
                        {"k_max", r.k_max},
                        {"greedy", r.greedy},
                        {"seed", r.seed},
                        {"accuracy", r.accuracy},
                        {"format_compliance", r.format_compliance},
                        {"pass_at", std::move(pass)}};
}

inline nlohmann::json item_record_to_json(const ItemRecord& rec) {
  return nlohmann::json{{"id", rec.id},
                        {"correct", rec.correct},
                        {"format_ok", rec.format_ok},
                        {"first_response", rec.first_response}};
}

inline nlohmann::json paired_report_to_json(const PairedReport& r) {
  nlohmann::json pass_delta = nlohmann::json::object();
  for (const auto& [k, v] : r.pass_at_delta) pass_delta[std::to_string(k)] = v;
  return nlohmann::json{
      {"deliberate", report_to_json(r.deliberate)},
      {"intuitive", report_to_json(r.intuitive)},
      {"delta", {{"accuracy", r.accuracy_delta}, {"pass_at", std::move(pass_delta)}}}};
}

inline void write_report(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << report_to_json(r).dump(2) << "\n";
}

inline void write_item_records(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write per-item records: " + path);
  for (const auto& rec : r.items) out << item_record_to_json(rec).dump() << "\n";
}

}  // namespace d2i
