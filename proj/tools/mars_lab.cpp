// mars_lab: train, compare, ablate, verify, score and evaluate from the
// command line. Exit codes: 0 success, 2 usage/config, 3 numeric failure,
// 4 verification failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mars/analysis.hpp"
#include "mars/experiments.hpp"
#include "mars/rewards.hpp"
#include "mars/trainer.hpp"

#ifndef MARS_LAB_VERSION
#define MARS_LAB_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerification = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("malformed JSON in '" + path + "': " + e.what());
  }
}

// Writes via a temporary file and rename so readers never see a partial file.
void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string to_text(const auto& writer) {
  std::ostringstream s;
  writer(s);
  return s.str();
}

fs::path prepare_out(const std::string& dir) {
  fs::path out(dir);
  fs::create_directories(out);
  return out;
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs/latest";
  bool dump_rollouts = false;
};

int cmd_run(const RunArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  mars::TrainConfig cfg;
  try {
    cfg = mars::train_config_from_json(read_json(args.config));
    if (args.seed) cfg.seed = *args.seed;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(e.what());
  }
  const fs::path out = prepare_out(args.out);

  std::ofstream rollouts;
  mars::TrainHooks hooks;
  if (args.dump_rollouts) {
    rollouts.open(out / "rollouts.jsonl");
    hooks.on_groups = [&](std::size_t it, const std::vector<mars::RolloutGroup>& groups) {
      for (const auto& g : groups) {
        json j = mars::group_to_json(g);
        j["iteration"] = it;
        rollouts << j.dump() << '\n';
      }
    };
  }
  const mars::TrainResult result = mars::train(cfg, hooks);

  write_atomically(out / "log.csv", to_text([&](std::ostream& s) {
                     mars::write_log_csv(s, result.log);
                   }));
  write_atomically(out / "policy_final.json", mars::policy_to_json(result.policy).dump(1) + "\n");
  write_atomically(out / "config_resolved.json", mars::train_config_to_json(cfg).dump(2) + "\n");

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest = {{"version", MARS_LAB_VERSION},
                   {"seed", cfg.seed},
                   {"config", mars::train_config_to_json(cfg)},
                   {"outputs", {"log.csv", "policy_final.json", "config_resolved.json"}},
                   {"final_multi_accuracy", result.final_multi_accuracy},
                   {"final_union_accuracy", result.final_union_accuracy},
                   {"wall_seconds", seconds}};
  if (args.dump_rollouts) manifest["outputs"].push_back("rollouts.jsonl");
  write_atomically(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "multi_accuracy=" << mars::format_number(result.final_multi_accuracy)
            << " union_accuracy=" << mars::format_number(result.final_union_accuracy) << '\n';
  return kExitOk;
}

template <typename Config>
Config parse_experiment(const std::string& path, Config (*parser)(const json&)) {
  try {
    return parser(read_json(path));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(e.what());
  }
}

int cmd_compare(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = parse_experiment(config_path, &mars::comparison_config_from_json);
  const fs::path out = prepare_out(out_dir);
  const auto result = mars::run_comparison(cfg);
  write_atomically(out / "compare.csv", to_text([&](std::ostream& s) {
                     mars::write_comparison_csv(s, result);
                   }));
  const std::string summary =
      to_text([&](std::ostream& s) { mars::write_comparison_summary_csv(s, result); });
  write_atomically(out / "compare_summary.csv", summary);
  std::cout << summary;
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = parse_experiment(config_path, &mars::ablation_config_from_json);
  const fs::path out = prepare_out(out_dir);
  const auto result = mars::run_ablation(cfg);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  write_atomically(out / "ablate_m.csv", to_text([&](std::ostream& s) {
                     mars::write_ablation_csv(s, result);
                   }));
  for (std::size_t i = 0; i < result.m_values.size(); ++i) {
    std::cout << "M=" << result.m_values[i]
              << " mean_multi_accuracy=" << mars::format_number(result.mean_multi(i)) << '\n';
  }
  return kExitOk;
}

struct VerifyArgs {
  std::string check = "all";
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  std::string out = ".";
};

std::vector<mars::VerificationReport> run_checks(const VerifyArgs& args) {
  std::vector<mars::VerificationReport> reports;
  const bool all = args.check == "all";
  if (all || args.check == "gradcheck") {
    reports.push_back(mars::verify_gradcheck(100, 50, args.seed));
  }
  if (all || args.check == "unbiasedness") {
    const mars::EnvSpec env = mars::conflict_spec(2, 4, 0.9, 0.3);
    const mars::ContextLayout layout(env);
    mars::Rng rng = mars::make_rng(args.seed, {7});
    const auto policy = mars::random_policy(layout.num_contexts(), env.num_answers, 0.5, rng);
    for (auto est : {mars::Normalizer::kMeanBaseline, mars::Normalizer::kGrpo,
                     mars::Normalizer::kMars}) {
      reports.push_back(mars::verify_unbiasedness(policy, env, est, args.samples, args.seed));
    }
    mars::EnvSpec blind = mars::conflict_spec(2, 4, 0.25, 0.25);
    blind.sources[0].noise = mars::NoiseModel::kWrongAnswer;
    auto r = mars::verify_unbiasedness(policy, blind, mars::Normalizer::kMeanBaseline,
                                       args.samples, args.seed);
    r.check += "/zero-information";
    reports.push_back(std::move(r));
  }
  if (all || args.check == "decomposition") {
    mars::Rng rng = mars::make_rng(args.seed, {8});
    const auto policy = mars::random_policy(16, 4, 1.0, rng);
    std::vector<mars::RolloutGroup> groups;
    for (std::size_t m : {1, 2, 4}) {
      auto part = mars::random_groups(policy, 334, 12, m, 0.0, 2.0, rng);
      groups.insert(groups.end(), part.begin(), part.end());
    }
    auto r = mars::verify_decomposition(policy, groups);
    r.seed = args.seed;
    reports.push_back(std::move(r));
  }
  if (reports.empty()) throw UsageError("unknown check '" + args.check + "'");
  return reports;
}

int cmd_verify(const VerifyArgs& args) {
  const auto reports = run_checks(args);
  json j = json::array();
  bool ok = true;
  for (const auto& r : reports) {
    j.push_back(r.to_json());
    ok = ok && r.passed();
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.check << '\n';
    for (const auto& m : r.metrics) {
      std::cout << "  " << m.name << " = " << mars::format_number(m.value) << " (" << m.comparison
                << ' ' << mars::format_number(m.threshold) << ")\n";
    }
  }
  const fs::path out = prepare_out(args.out);
  write_atomically(out / "verification.json",
                   json{{"version", MARS_LAB_VERSION}, {"reports", j}, {"passed", ok}}.dump(2) +
                       "\n");
  return ok ? kExitOk : kExitVerification;
}

struct ScoreArgs {
  std::string input;
  std::string output;
  std::string task = "grounding";
  double format_weight = 1.0;
  bool lenient = false;
};

int cmd_score(const ScoreArgs& args) {
  std::ifstream in(args.input);
  if (!in) throw UsageError("cannot read '" + args.input + "'");
  std::ofstream file;
  if (!args.output.empty()) {
    file.open(args.output);
    if (!file) throw UsageError("cannot write '" + args.output + "'");
  }
  std::ostream& out = args.output.empty() ? std::cout : file;
  const mars::RewardOptions options{args.format_weight, args.lenient};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    mars::RewardBreakdown r;
    try {
      const json rec = json::parse(line);
      const std::string response = rec.at("response").get<std::string>();
      if (args.task == "grounding") {
        std::vector<mars::BoundingBox> gold;
        for (const auto& b : rec.at("gold")) {
          const auto c = b.get<std::vector<double>>();
          if (c.size() != 4) throw UsageError("gold boxes need 4 coordinates");
          gold.emplace_back(c[0], c[1], c[2], c[3]);
        }
        r = mars::grounding_reward(response, gold, options);
      } else {
        r = mars::vqa_reward(response, rec.at("gold").get<std::string>(), options);
      }
    } catch (const std::exception& e) {
      throw UsageError(args.input + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out << json{{"task_reward", r.task_reward},
                {"format_reward", r.format_reward},
                {"total", r.total}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

struct EvalArgs {
  std::string policy;
  std::string config;
  std::string mode = "multi";
};

int cmd_eval(const EvalArgs& args) {
  mars::TrainConfig cfg;
  mars::PolicyTable policy;
  try {
    cfg = mars::train_config_from_json(read_json(args.config));
    policy = mars::load_policy(args.policy);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const mars::ContextLayout layout(cfg.env);
  if (policy.num_contexts() != layout.num_contexts() ||
      policy.num_actions() != cfg.env.num_answers) {
    throw UsageError("policy shape does not match the config's environment");
  }
  const auto instances = mars::evaluation_set(cfg);
  const mars::JointLaw law(cfg.env);
  json j = {{"instances", instances.size()}};
  if (args.mode == "multi" || args.mode == "all") {
    j["multi"] = mars::evaluate(policy, instances, mars::EvalMode::kMulti);
    j["multi_exact"] = law.greedy_multi_accuracy(policy);
  }
  if (args.mode == "union" || args.mode == "all") {
    j["union"] = mars::evaluate(policy, instances, mars::EvalMode::kUnion);
    j["best_mono"] = mars::best_mono_accuracy(policy, instances);
  }
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mono-anchored advantage normalization lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MARS_LAB_VERSION);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Train one policy and write log.csv and policy_final.json");
  run_cmd->add_option("--config", run.config, "Train config (JSON)")->required();
  run_cmd->add_option("--seed", run.seed, "Override the config's run seed");
  run_cmd->add_option("--out", run.out, "Output directory");
  run_cmd->add_flag("--dump-rollouts", run.dump_rollouts, "Also write rollouts.jsonl");

  std::string compare_config, compare_out = "runs/compare";
  auto* compare_cmd = app.add_subcommand("compare", "Paired comparison of normalizers across seeds");
  compare_cmd->add_option("--config", compare_config, "Comparison config (JSON)")->required();
  compare_cmd->add_option("--out", compare_out, "Output directory");

  std::string ablate_config, ablate_out = "runs/ablate_m";
  auto* ablate_cmd = app.add_subcommand("ablate-m", "Accuracy against the number of mono rollouts");
  ablate_cmd->add_option("--config", ablate_config, "Ablation config (JSON)")->required();
  ablate_cmd->add_option("--out", ablate_out, "Output directory");

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify", "Numerical checks; writes verification.json");
  verify_cmd->add_option("--check", verify.check, "gradcheck|unbiasedness|decomposition|all")
      ->check(CLI::IsMember({"gradcheck", "unbiasedness", "decomposition", "all"}));
  verify_cmd->add_option("--samples", verify.samples, "Monte Carlo groups for unbiasedness")
      ->check(CLI::PositiveNumber);
  verify_cmd->add_option("--seed", verify.seed, "Seed");
  verify_cmd->add_option("--out", verify.out, "Output directory");

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Score a JSONL file of {response, gold} records");
  score_cmd->add_option("--input", score.input, "Input JSONL")->required();
  score_cmd->add_option("--output", score.output, "Output JSONL (default stdout)");
  score_cmd->add_option("--task", score.task, "grounding|vqa")
      ->check(CLI::IsMember({"grounding", "vqa"}));
  score_cmd->add_option("--format-weight", score.format_weight, "Format reward weight");
  score_cmd->add_flag("--lenient", score.lenient, "Salvage answers from malformed responses");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy accuracy of a saved policy");
  eval_cmd->add_option("--policy", eval.policy, "policy_final.json")->required();
  eval_cmd->add_option("--config", eval.config, "Train config that defines the environment")
      ->required();
  eval_cmd->add_option("--mode", eval.mode, "multi|union|all")
      ->check(CLI::IsMember({"multi", "union", "all"}));

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

  try {
    if (*run_cmd) return cmd_run(run);
    if (*compare_cmd) return cmd_compare(compare_config, compare_out);
    if (*ablate_cmd) return cmd_ablate(ablate_config, ablate_out);
    if (*verify_cmd) return cmd_verify(verify);
    if (*score_cmd) return cmd_score(score);
    if (*eval_cmd) return cmd_eval(eval);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const mars::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
