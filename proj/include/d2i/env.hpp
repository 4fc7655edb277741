#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "d2i/errors.hpp"
#include "d2i/grammar.hpp"
#include "d2i/reward.hpp"
#include "d2i/rng.hpp"
#include "d2i/vocab.hpp"

namespace d2i {

/// Answer rule applied to the crucial cell's value.
enum class Rule { Identity, AddConst, Double, Complement180 };

inline constexpr long kAddConstOffset = 10;

inline const char* rule_name(Rule r) {
  switch (r) {
    case Rule::Identity: return "identity";
    case Rule::AddConst: return "add_const";
    case Rule::Double: return "double";
    case Rule::Complement180: return "complement180";
  }
  return "?";
}

inline std::optional<Rule> rule_from_name(const std::string& s) {
  if (s == "identity") return Rule::Identity;
  if (s == "add_const") return Rule::AddConst;
  if (s == "double") return Rule::Double;
  if (s == "complement180") return Rule::Complement180;
  return std::nullopt;
}

inline long apply_rule(Rule r, long value) {
  switch (r) {
    case Rule::Identity: return value;
    case Rule::AddConst: return value + kAddConstOffset;
    case Rule::Double: return 2 * value;
    case Rule::Complement180: return 180 - value;
  }
  return value;
}

/// Controls the cell value range: easy keeps values single-digit so a linear
/// policy has a learnable answer distribution; standard uses the full range.
enum class Difficulty { Easy, Standard };

inline const char* difficulty_name(Difficulty d) {
  return d == Difficulty::Easy ? "easy" : "standard";
}

inline std::optional<Difficulty> difficulty_from_name(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "standard") return Difficulty::Standard;
  return std::nullopt;
}

inline int max_cell_value(Difficulty d) { return d == Difficulty::Easy ? 9 : 99; }

/// A labeled grid standing in for the image: every (col, row) holds one
/// integer value in [0, 99].
struct GridScene {
  int width = 4;
  int height = 4;
  std::vector<int> cells;  // row-major

  int at(int col, int row) const { return cells[static_cast<std::size_t>(row * width + col)]; }
  int& at(int col, int row) { return cells[static_cast<std::size_t>(row * width + col)]; }
};

struct PromptInstance {
  std::uint64_t id = 0;
  GridScene scene;
  TokenSeq question;
  GoldAnswer gold;
  std::pair<int, int> crucial_cell{0, 0};  // (col, row)
  Rule rule = Rule::Identity;
};

/// Question templates. Each rule has a distinct marker so the question
/// uniquely determines (crucial_cell, rule).
inline TokenSeq question_tokens(Rule rule, std::pair<int, int> cell, const Vocab& vocab) {
  TokenSeq out;
  auto push = [&](const char* word) { out.push_back(vocab.require(word)); };
  auto push_number = [&](long v) {
    for (Token t : vocab.number_tokens(v)) out.push_back(t);
  };
  push("what");
  if (rule == Rule::Double) push("double");
  if (rule == Rule::Complement180) {
    push_number(180);
    push("-");
  }
  push("value");
  push("at");
  push("cell");
  push("(");
  push_number(cell.first);
  push(",");
  push_number(cell.second);
  push(")");
  if (rule == Rule::AddConst) {
    push("plus");
    push_number(kAddConstOffset);
  }
  return out;
}

/// Row-major scene serialization: "scene W H ( c , r ) v ...". The fixed
/// order makes cell positions deterministic inside the prompt.
inline TokenSeq scene_tokens(const GridScene& scene, const Vocab& vocab) {
  TokenSeq out;
  auto push_number = [&](long v) {
    for (Token t : vocab.number_tokens(v)) out.push_back(t);
  };
  out.push_back(vocab.require("scene"));
  push_number(scene.width);
  push_number(scene.height);
  for (int row = 0; row < scene.height; ++row) {
    for (int col = 0; col < scene.width; ++col) {
      out.push_back(vocab.require("("));
      push_number(col);
      out.push_back(vocab.require(","));
      push_number(row);
      out.push_back(vocab.require(")"));
      push_number(scene.at(col, row));
    }
  }
  return out;
}

inline long recompute_gold(const GridScene& scene, std::pair<int, int> cell, Rule rule) {
  return apply_rule(rule, scene.at(cell.first, cell.second));
}

inline PromptInstance generate_instance(Rng& rng, Difficulty difficulty, std::uint64_t id,
                                        const Vocab& vocab, int width = 4, int height = 4) {
  PromptInstance inst;
  inst.id = id;
  inst.scene.width = width;
  inst.scene.height = height;
  inst.scene.cells.resize(static_cast<std::size_t>(width * height));
  const int vmax = max_cell_value(difficulty);
  for (auto& c : inst.scene.cells) c = uniform_int(rng, 0, vmax);
  inst.crucial_cell = {uniform_int(rng, 0, width - 1), uniform_int(rng, 0, height - 1)};
  inst.rule = static_cast<Rule>(uniform_int(rng, 0, 3));
  inst.question = question_tokens(inst.rule, inst.crucial_cell, vocab);
  inst.gold = GoldAnswer::number(recompute_gold(inst.scene, inst.crucial_cell, inst.rule));
  return inst;
}

/// Instruction token sequences per (strategy, mode). Deliberate entries name
/// exactly the tags their format spec requires; the intuitive entry names
/// none and is shared across strategies.
class PromptRegistry {
 public:
  static PromptRegistry standard(const Vocab& vocab) {
    PromptRegistry reg;
    auto set = [&](StrategyKind s, ReasoningMode m, const std::string& text) {
      reg.entries_[key(s, m)] = vocab.tokenize(text);
    };
    set(StrategyKind::Base, ReasoningMode::Deliberate,
        "assistant think inside <think> </think> then final answer inside <answer> </answer>");
    set(StrategyKind::Loc, ReasoningMode::Deliberate,
        "assistant think inside <think> </think> with coordinate inside <box> </box> "
        "then final answer inside <answer> </answer>");
    set(StrategyKind::Jus, ReasoningMode::Deliberate,
        "assistant think inside <think> </think> then describe crucial region inside "
        "<crucial> </crucial> then final answer inside <answer> </answer>");
    set(StrategyKind::Par, ReasoningMode::Deliberate,
        "assistant first parse scene inside <parse> </parse> then think inside "
        "<think> </think> then final answer inside <answer> </answer>");
    const std::string intuitive = "assistant give reasoning first then final answer";
    for (StrategyKind s : {StrategyKind::Base, StrategyKind::Loc, StrategyKind::Jus,
                           StrategyKind::Par})
      set(s, ReasoningMode::Intuitive, intuitive);
    return reg;
  }

  const TokenSeq& instruction(StrategyKind s, ReasoningMode m) const {
    auto it = entries_.find(key(s, m));
    if (it == entries_.end())
      throw MissingRegistryEntryError(std::string(strategy_name(s)) + "/" + mode_name(m));
    return it->second;
  }

  bool contains(StrategyKind s, ReasoningMode m) const {
    return entries_.find(key(s, m)) != entries_.end();
  }

 private:
  static int key(StrategyKind s, ReasoningMode m) {
    return static_cast<int>(s) * 2 + static_cast<int>(m);
  }
  std::map<int, TokenSeq> entries_;
};

/// instruction ++ serialized scene ++ question; only the instruction segment
/// depends on (strategy, mode).
inline TokenSeq render_prompt(const PromptInstance& inst, StrategyKind strategy,
                              ReasoningMode mode, const PromptRegistry& registry,
                              const Vocab& vocab) {
  TokenSeq out = registry.instruction(strategy, mode);
  for (Token t : scene_tokens(inst.scene, vocab)) out.push_back(t);
  for (Token t : inst.question) out.push_back(t);
  return out;
}

struct Dataset {
  std::vector<PromptInstance> train;
  std::vector<PromptInstance> test;
};

/// Seeded generation of a disjoint train/test split; instances keep their
/// generation ids, sorted within each split.
inline Dataset make_dataset(Rng& rng, std::size_t count, double split_ratio,
                            Difficulty difficulty, const Vocab& vocab, int width = 4,
                            int height = 4) {
  if (count < 2) throw ConfigError("dataset needs at least 2 instances");
  std::vector<PromptInstance> all;
  all.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    all.push_back(generate_instance(rng, difficulty, i, vocab, width, height));
  std::size_t n_train = static_cast<std::size_t>(static_cast<double>(count) * split_ratio);
  if (n_train == 0 || n_train >= count)
    throw ConfigError("split_ratio leaves an empty train or test set");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  shuffle_inplace(order, rng);
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i)
    (i < n_train ? ds.train : ds.test).push_back(all[order[i]]);
  auto by_id = [](const PromptInstance& a, const PromptInstance& b) { return a.id < b.id; };
  std::sort(ds.train.begin(), ds.train.end(), by_id);
  std::sort(ds.test.begin(), ds.test.end(), by_id);
  return ds;
}

// --- JSON-lines persistence -------------------------------------------------
// One instance per line:
//   {"id":N,"width":W,"height":H,"cells":[[row0...],[row1...]],
//    "crucial_cell":[col,row],"rule":"identity","gold":{"kind":"numeric","value":V}}

inline nlohmann::json instance_to_json(const PromptInstance& inst) {
  nlohmann::json cells = nlohmann::json::array();
  for (int row = 0; row < inst.scene.height; ++row) {
    nlohmann::json r = nlohmann::json::array();
    for (int col = 0; col < inst.scene.width; ++col) r.push_back(inst.scene.at(col, row));
    cells.push_back(std::move(r));
  }
  nlohmann::json gold;
  if (inst.gold.kind == GoldKind::Numeric)
    gold = {{"kind", "numeric"}, {"value", inst.gold.numeric}};
  else
    gold = {{"kind", "symbolic"}, {"value", inst.gold.symbolic}};
  return nlohmann::json{{"id", inst.id},
                        {"width", inst.scene.width},
                        {"height", inst.scene.height},
                        {"cells", std::move(cells)},
                        {"crucial_cell", {inst.crucial_cell.first, inst.crucial_cell.second}},
                        {"rule", rule_name(inst.rule)},
                        {"gold", std::move(gold)}};
}

inline PromptInstance instance_from_json(const nlohmann::json& j, const Vocab& vocab) {
  PromptInstance inst;
  inst.id = j.at("id").get<std::uint64_t>();
  inst.scene.width = j.at("width").get<int>();
  inst.scene.height = j.at("height").get<int>();
  if (inst.scene.width <= 0 || inst.scene.height <= 0)
    throw ConfigError("instance has non-positive grid dimensions");
  inst.scene.cells.resize(static_cast<std::size_t>(inst.scene.width * inst.scene.height));
  const auto& cells = j.at("cells");
  for (int row = 0; row < inst.scene.height; ++row)
    for (int col = 0; col < inst.scene.width; ++col) {
      int v = cells.at(static_cast<std::size_t>(row)).at(static_cast<std::size_t>(col)).get<int>();
      if (v < 0 || v > 99) throw ConfigError("cell value out of range [0, 99]");
      inst.scene.at(col, row) = v;
    }
  inst.crucial_cell = {j.at("crucial_cell").at(0).get<int>(),
                       j.at("crucial_cell").at(1).get<int>()};
  if (inst.crucial_cell.first < 0 || inst.crucial_cell.first >= inst.scene.width ||
      inst.crucial_cell.second < 0 || inst.crucial_cell.second >= inst.scene.height)
    throw ConfigError("crucial_cell outside the grid");
  auto rule = rule_from_name(j.at("rule").get<std::string>());
  if (!rule) throw ConfigError("unknown rule: " + j.at("rule").get<std::string>());
  inst.rule = *rule;
  const auto& gold = j.at("gold");
  if (gold.at("kind") == "numeric")
    inst.gold = GoldAnswer::number(gold.at("value").get<long>());
  else
    inst.gold = GoldAnswer::symbol(gold.at("value").get<std::string>());
  if (inst.gold.kind == GoldKind::Numeric &&
      inst.gold.numeric != recompute_gold(inst.scene, inst.crucial_cell, inst.rule))
    throw ConfigError("gold answer inconsistent with scene, crucial_cell and rule");
  inst.question = question_tokens(inst.rule, inst.crucial_cell, vocab);
  return inst;
}

inline void write_instances(const std::string& path, std::span<const PromptInstance> instances) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const auto& inst : instances) out << instance_to_json(inst).dump() << "\n";
}

inline std::vector<PromptInstance> read_instances(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<PromptInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed JSON record");
    out.push_back(instance_from_json(j, vocab));
  }
  return out;
}

}  // namespace d2i
