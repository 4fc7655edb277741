// d2i: command-line front end for the toy GRPO training engine.
//
// Exit codes: 0 success, 1 domain failure (invalid format, empty dataset,
// bad data), 2 usage error, 3 I/O error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "d2i/d2i.hpp"
#include "d2i/log.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

using namespace d2i;

Vocab load_vocab(const std::string& path) {
  if (path.empty()) return Vocab::canonical();
  return Vocab::load(path);
}

StrategyKind parse_strategy(const std::string& s) {
  auto v = strategy_from_name(s);
  if (!v) throw ConfigError("unknown strategy: " + s + " (expected base|loc|jus|par)");
  return *v;
}

ReasoningMode parse_mode(const std::string& s) {
  auto v = mode_from_name(s);
  if (!v) throw ConfigError("unknown mode: " + s + " (expected deliberate|intuitive)");
  return *v;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string out;
  std::string vocab;
  std::uint64_t seed = 1;
  std::size_t count = 1000;
  double split_ratio = 0.8;
  std::string difficulty = "easy";
  int grid_size = 4;
};

int run_gen_data(const GenDataArgs& args) {
  auto difficulty = difficulty_from_name(args.difficulty);
  if (!difficulty) throw ConfigError("unknown difficulty: " + args.difficulty);
  Vocab vocab = load_vocab(args.vocab);
  Rng rng(mix64(args.seed, 0xda7a5e7ULL));
  Dataset ds = make_dataset(rng, args.count, args.split_ratio, *difficulty, vocab,
                            args.grid_size, args.grid_size);
  std::filesystem::create_directories(args.out);
  write_instances(args.out + "/train.jsonl", ds.train);
  write_instances(args.out + "/test.jsonl", ds.test);
  std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size()
            << " test instances to " << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::string vocab;
  std::vector<std::pair<std::string, std::string>> overrides;
};

int run_train(const TrainArgs& args) {
  TrainConfig cfg;
  if (!args.config.empty()) cfg = train_config_from_file(args.config);
  for (const auto& [key, value] : args.overrides) set_config_key(cfg, key, value);
  if (cfg.dataset.empty())
    throw ConfigError("no train dataset configured (train.dataset or --dataset)");
  Vocab vocab = load_vocab(args.vocab);
  log_info("training strategy=%s steps=%d dataset=%s", strategy_name(cfg.strategy), cfg.steps,
           cfg.dataset.c_str());
  RunResult result = run_training(cfg, vocab, args.out, args.resume);
  std::cout << "log: " << result.log_path << "\n"
            << "final checkpoint: " << result.final_checkpoint_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval / passk

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::string vocab;
  std::string mode = "intuitive";
  std::string strategy = "base";
  int samples = 3;
  bool greedy = false;
  std::uint64_t seed = 1;
  double temperature = 1.0;
  int max_response_len = 64;
  int workers = 1;
};

EvalReport evaluate_checkpoint(const EvalArgs& args, const Vocab& vocab, ReasoningMode mode) {
  Checkpoint ck = read_checkpoint(args.checkpoint);
  FeatureExtractor extractor(vocab, args.max_response_len);
  if (ck.policy.feature_dim() != extractor.feature_dim() ||
      ck.policy.vocab_size() != vocab.size())
    throw ConfigError("checkpoint parameter shape does not match the vocabulary");
  auto items = read_instances(args.dataset, vocab);
  if (items.empty()) throw EmptyTestSetError();

  EvalConfig cfg;
  cfg.mode = mode;
  cfg.strategy = parse_strategy(args.strategy);
  cfg.k_max = args.samples;
  cfg.greedy = args.greedy;
  cfg.seed = args.seed;
  cfg.temperature = args.temperature;
  cfg.workers = args.workers;
  return evaluate(ck.policy, extractor, items, cfg, PromptRegistry::standard(vocab));
}

void print_report(const EvalReport& r) {
  std::cout << "items: " << r.n_items << "  mode: " << mode_name(r.mode)
            << "  strategy: " << strategy_name(r.strategy) << "\n"
            << "accuracy: " << r.accuracy << "\n"
            << "format_compliance: " << r.format_compliance << "\n";
  for (const auto& [k, v] : r.pass_at) std::cout << "pass@" << k << ": " << v << "\n";
}

int run_eval(const EvalArgs& args) {
  Vocab vocab = load_vocab(args.vocab);
  EvalReport report = evaluate_checkpoint(args, vocab, parse_mode(args.mode));
  print_report(report);
  if (!args.out.empty()) {
    std::filesystem::create_directories(args.out);
    write_report(report, args.out + "/report.json");
    write_item_records(report, args.out + "/items.jsonl");
    std::cout << "report: " << args.out << "/report.json\n";
  }
  return kExitOk;
}

int run_passk(const EvalArgs& args) {
  Vocab vocab = load_vocab(args.vocab);
  EvalReport report = evaluate_checkpoint(args, vocab, parse_mode(args.mode));
  for (const auto& [k, v] : report.pass_at) std::cout << "pass@" << k << ": " << v << "\n";
  if (!args.out.empty()) {
    std::filesystem::create_directories(args.out);
    write_report(report, args.out + "/report.json");
  }
  return kExitOk;
}

int run_compare(const EvalArgs& args) {
  Vocab vocab = load_vocab(args.vocab);
  Checkpoint ck = read_checkpoint(args.checkpoint);
  FeatureExtractor extractor(vocab, args.max_response_len);
  if (ck.policy.feature_dim() != extractor.feature_dim() ||
      ck.policy.vocab_size() != vocab.size())
    throw ConfigError("checkpoint parameter shape does not match the vocabulary");
  auto items = read_instances(args.dataset, vocab);
  if (items.empty()) throw EmptyTestSetError();

  PairedReport paired =
      compare_modes(ck.policy, extractor, items, parse_strategy(args.strategy), args.samples,
                    args.seed, PromptRegistry::standard(vocab), args.workers);
  std::cout << "deliberate (D2D): accuracy " << paired.deliberate.accuracy
            << ", compliance " << paired.deliberate.format_compliance << "\n";
  std::cout << "intuitive  (D2I): accuracy " << paired.intuitive.accuracy << "\n";
  std::cout << "delta accuracy (D2I - D2D): " << paired.accuracy_delta << "\n";
  for (const auto& [k, v] : paired.pass_at_delta)
    std::cout << "delta pass@" << k << ": " << v << "\n";
  if (!args.out.empty()) {
    std::filesystem::create_directories(args.out);
    std::ofstream out(args.out + "/compare.json");
    if (!out) throw IoError("cannot write report: " + args.out + "/compare.json");
    out << paired_report_to_json(paired).dump(2) << "\n";
    std::cout << "report: " << args.out << "/compare.json\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- check-format

struct CheckFormatArgs {
  std::string file;
  std::string text;
  std::string vocab;
  std::string strategy = "base";
  std::string mode = "deliberate";
};

int run_check_format(const CheckFormatArgs& args) {
  Vocab vocab = load_vocab(args.vocab);
  std::string text = args.text;
  if (!args.file.empty()) {
    std::ifstream in(args.file);
    if (!in) throw IoError("cannot open input file: " + args.file);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  TokenSeq tokens = vocab.tokenize(text);
  FormatSpec spec = spec_for(parse_strategy(args.strategy), parse_mode(args.mode));
  ValidationResult result = validate(parse_tagged(tokens, vocab), spec, vocab);
  for (const auto& v : result.violations) std::cout << to_string(v) << "\n";
  return result.ok ? kExitOk : kExitDomain;
}

// ---------------------------------------------------------------- export-curves

struct ExportCurvesArgs {
  std::string log;
  std::string out;
};

struct CurvePoint {
  long step;
  double total, format, accuracy, kl, clip_fraction;
};

std::string svg_chart(const std::vector<CurvePoint>& points) {
  const double width = 720, height = 440;
  const double ml = 60, mr = 20, mt = 20, mb = 50;
  double x0 = static_cast<double>(points.front().step);
  double x1 = static_cast<double>(points.back().step);
  if (x1 <= x0) x1 = x0 + 1;

  auto px = [&](double step) {
    return ml + (step - x0) / (x1 - x0) * (width - ml - mr);
  };
  auto py = [&](double reward) { return height - mb - reward * (height - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << width - mr << "\" y2=\""
      << py(0) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << ml << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(tick) << "\" x2=\"" << ml << "\" y2=\""
        << py(tick) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(tick) + 4
        << "\" text-anchor=\"end\" font-size=\"12\">" << tick << "</text>\n";
  }
  svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">step</text>\n";
  svg << "<text x=\"16\" y=\"" << (py(0) + py(1)) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << (py(0) + py(1)) / 2 << ")\">mean total reward</text>\n";
  svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : points)
    svg << px(static_cast<double>(p.step)) << "," << py(std::clamp(p.total, 0.0, 1.0)) << " ";
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

int run_export_curves(const ExportCurvesArgs& args) {
  std::ifstream in(args.log);
  if (!in) throw IoError("cannot open log file: " + args.log);
  std::vector<CurvePoint> points;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("step") ||
        !j.contains("mean_total_reward"))
      throw ConfigError(args.log + ":" + std::to_string(lineno) + ": malformed log record");
    try {
      points.push_back({j.at("step").get<long>(), j.at("mean_total_reward").get<double>(),
                        j.at("mean_format_reward").get<double>(),
                        j.at("mean_accuracy_reward").get<double>(),
                        j.at("mean_kl").get<double>(), j.at("clip_fraction").get<double>()});
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(args.log + ":" + std::to_string(lineno) + ": malformed log record");
    }
  }
  if (points.empty()) throw ConfigError("log file has no records: " + args.log);

  std::filesystem::create_directories(args.out);
  const std::string csv_path = args.out + "/curves.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "step,mean_total_reward,mean_format_reward,mean_accuracy_reward,mean_kl,"
         "clip_fraction\n";
  for (const auto& p : points)
    csv << p.step << "," << p.total << "," << p.format << "," << p.accuracy << "," << p.kl
        << "," << p.clip_fraction << "\n";

  const std::string svg_path = args.out + "/curves.svg";
  std::ofstream svg(svg_path);
  if (!svg) throw IoError("cannot write " + svg_path);
  svg << svg_chart(points);
  std::cout << "wrote " << csv_path << " and " << svg_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- wiring

void add_eval_options(CLI::App* cmd, EvalArgs& args, bool with_mode) {
  cmd->add_option("--checkpoint", args.checkpoint, "checkpoint JSON")->required();
  cmd->add_option("--dataset", args.dataset, "evaluation instances (JSONL)")->required();
  cmd->add_option("--out", args.out, "output directory for reports");
  cmd->add_option("--vocab", args.vocab, "vocabulary file (default: built-in)");
  if (with_mode) cmd->add_option("--mode", args.mode, "deliberate|intuitive");
  cmd->add_option("--strategy", args.strategy, "base|loc|jus|par");
  cmd->add_option("--samples", args.samples, "samples per item (k_max)");
  cmd->add_flag("--greedy", args.greedy, "single argmax decode instead of sampling");
  cmd->add_option("--seed", args.seed, "evaluation seed");
  cmd->add_option("--temperature", args.temperature, "sampling temperature");
  cmd->add_option("--max-response-len", args.max_response_len,
                  "decoder length cap; must match training");
  cmd->add_option("--workers", args.workers, "worker threads");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale GRPO trainer with deliberate-to-intuitive prompt switching"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic grid dataset");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--seed", gen_args.seed, "generation seed");
  gen->add_option("--count", gen_args.count, "total instance count");
  gen->add_option("--split-ratio", gen_args.split_ratio, "train fraction");
  gen->add_option("--difficulty", gen_args.difficulty, "easy|standard");
  gen->add_option("--grid-size", gen_args.grid_size, "square grid side length");
  gen->add_option("--vocab", gen_args.vocab, "vocabulary file (default: built-in)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run GRPO training");
  train->add_option("--config", train_args.config, "config file (key = value lines)");
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  train->add_option("--vocab", train_args.vocab, "vocabulary file (default: built-in)");
  std::string ov_seed, ov_strategy, ov_steps, ov_group, ov_beta, ov_eps, ov_klclip, ov_workers,
      ov_dataset;
  train->add_option("--seed", ov_seed, "override train.seed");
  train->add_option("--strategy", ov_strategy, "override train.strategy");
  train->add_option("--steps", ov_steps, "override train.steps");
  train->add_option("--group-size", ov_group, "override grpo.group_size");
  train->add_option("--kl-beta", ov_beta, "override grpo.kl_beta");
  train->add_option("--clip-eps", ov_eps, "override grpo.clip_epsilon");
  train->add_option("--kl-in-clip", ov_klclip, "override grpo.kl_in_clip (true|false)");
  train->add_option("--workers", ov_workers, "override train.workers");
  train->add_option("--dataset", ov_dataset, "override train.dataset");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_eval_options(eval_cmd, eval_args, /*with_mode=*/true);

  EvalArgs compare_args;
  auto* compare_cmd = app.add_subcommand("compare", "paired D2D vs D2I evaluation");
  add_eval_options(compare_cmd, compare_args, /*with_mode=*/false);

  EvalArgs passk_args;
  auto* passk_cmd = app.add_subcommand("passk", "pass@k table for a checkpoint");
  add_eval_options(passk_cmd, passk_args, /*with_mode=*/true);

  CheckFormatArgs check_args;
  auto* check = app.add_subcommand("check-format", "validate a response against a format");
  check->add_option("file", check_args.file, "response file");
  check->add_option("--text", check_args.text, "inline response text");
  check->add_option("--strategy", check_args.strategy, "base|loc|jus|par");
  check->add_option("--mode", check_args.mode, "deliberate|intuitive");
  check->add_option("--vocab", check_args.vocab, "vocabulary file (default: built-in)");

  ExportCurvesArgs curves_args;
  auto* curves = app.add_subcommand("export-curves", "CSV and SVG from a training log");
  curves->add_option("--log", curves_args.log, "training log (JSONL)")->required();
  curves->add_option("--out", curves_args.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  // flags win over config file values
  if (gen->parsed() && (gen_args.count < 2 || gen_args.grid_size < 1)) {
    std::cerr << "error: --count must be >= 2 and --grid-size >= 1\n";
    return kExitUsage;
  }
  auto push_override = [&](const std::string& key, const std::string& value) {
    if (!value.empty()) train_args.overrides.emplace_back(key, value);
  };
  push_override("train.seed", ov_seed);
  push_override("train.strategy", ov_strategy);
  push_override("train.steps", ov_steps);
  push_override("grpo.group_size", ov_group);
  push_override("grpo.kl_beta", ov_beta);
  push_override("grpo.clip_epsilon", ov_eps);
  push_override("grpo.kl_in_clip", ov_klclip);
  push_override("train.workers", ov_workers);
  push_override("train.dataset", ov_dataset);

  if (check->parsed() && check_args.file.empty() && check_args.text.empty()) {
    std::cerr << "error: check-format needs a file argument or --text\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (compare_cmd->parsed()) return run_compare(compare_args);
    if (passk_cmd->parsed()) return run_passk(passk_args);
    if (check->parsed()) return run_check_format(check_args);
    if (curves->parsed()) return run_export_curves(curves_args);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}
