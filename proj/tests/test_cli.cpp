#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("mars_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  static const struct Cleanup {
    ~Cleanup() { fs::remove_all(dir); }
  } cleanup;
  return dir;
}

int run_cli(const std::string& args, const std::string& tag = "out") {
  const fs::path log = workdir() / (tag + ".txt");
  const std::string cmd =
      std::string(MARS_LAB_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_file(const std::string& name, const std::string& content) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << content;
  return p;
}

json tiny_config() {
  return {{"env", {{"regime", "promotion"}, {"dataset_size", 64}}},
          {"advantage", "mars"},
          {"iterations", 15},
          {"batch_instances", 8},
          {"learning_rate", 1.0},
          {"eval_instances", 200}};
}

}  // namespace

TEST_CASE("run writes its artifacts and is reproducible") {
  const auto cfg = write_file("tiny.json", tiny_config().dump());
  const fs::path a = workdir() / "run_a", b = workdir() / "run_b";
  REQUIRE(run_cli("run --config " + cfg.string() + " --seed 7 --out " + a.string()) == 0);
  REQUIRE(run_cli("run --config " + cfg.string() + " --seed 7 --out " + b.string() +
                  " --dump-rollouts") == 0);
  for (const char* f : {"log.csv", "policy_final.json", "config_resolved.json", "manifest.json"}) {
    CHECK_MESSAGE(fs::exists(a / f), f);
  }
  CHECK(!fs::exists(a / "rollouts.jsonl"));
  CHECK(fs::exists(b / "rollouts.jsonl"));
  CHECK(slurp(a / "log.csv") == slurp(b / "log.csv"));
  CHECK(slurp(a / "policy_final.json") == slurp(b / "policy_final.json"));

  const auto manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("seed") == 7);
  CHECK(manifest.contains("version"));
  CHECK(manifest.contains("wall_seconds"));
  for (const auto& f : manifest.at("outputs")) CHECK(fs::exists(a / f.get<std::string>()));

  // The resolved config reproduces the run on its own.
  const fs::path c = workdir() / "run_c";
  REQUIRE(run_cli("run --config " + (a / "config_resolved.json").string() + " --out " + c.string()) == 0);
  CHECK(slurp(c / "log.csv") == slurp(a / "log.csv"));

  const auto header = slurp(a / "log.csv").substr(0, slurp(a / "log.csv").find('\n'));
  CHECK(header ==
        "iteration,mean_multi_reward,max_multi_reward,mean_mono_reward,max_mono_reward,delta_ig,"
        "mean_entropy,grad_norm");

  CHECK(run_cli("eval --policy " + (a / "policy_final.json").string() + " --config " +
                    cfg.string() + " --mode all",
                "eval") == 0);
  const auto ev = json::parse(slurp(workdir() / "eval.txt"));
  CHECK(ev.at("multi").get<double>() >= 0.0);
  CHECK(ev.contains("union"));
}

TEST_CASE("usage and config errors exit with 2") {
  CHECK(run_cli("run --config " + (workdir() / "missing.json").string()) == 2);
  CHECK(run_cli("run") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("") == 2);
  const auto broken = write_file("broken.json", "{\"iterations\": ");
  CHECK(run_cli("run --config " + broken.string()) == 2);
  auto bad = tiny_config();
  bad["learnign_rate"] = 1.0;
  CHECK(run_cli("run --config " + write_file("typo.json", bad.dump()).string()) == 2);
  bad = tiny_config();
  bad["rollouts_per_group"] = 1;
  CHECK(run_cli("run --config " + write_file("n1.json", bad.dump()).string()) == 2);
  CHECK(run_cli("verify --check everything") == 2);
  CHECK(run_cli("score --input " + broken.string() + " --task caption") == 2);
}

TEST_CASE("verify writes a report") {
  const fs::path out = workdir() / "verify";
  CHECK(run_cli("verify --check decomposition --seed 3 --out " + out.string()) == 0);
  const auto report = json::parse(slurp(out / "verification.json"));
  CHECK(report.at("passed") == true);
  CHECK(report.at("reports").at(0).at("check") == "decomposition");
}

TEST_CASE("score emits one breakdown per record") {
  const auto input = write_file(
      "ground.jsonl",
      "{\"response\": \"<think>t</think><answer>[[0,0,10,10]]</answer>\", \"gold\": [[5,0,15,10]]}\n"
      "\n"
      "{\"response\": \"garbage\", \"gold\": [[0,0,10,10]]}\n");
  const fs::path out = workdir() / "scored.jsonl";
  REQUIRE(run_cli("score --input " + input.string() + " --task grounding --output " + out.string()) == 0);
  std::istringstream lines(slurp(out));
  std::string l1, l2, extra;
  std::getline(lines, l1);
  std::getline(lines, l2);
  CHECK(!std::getline(lines, extra));
  const auto r1 = json::parse(l1), r2 = json::parse(l2);
  CHECK(r1.at("task_reward").get<double>() == doctest::Approx(1.0 / 3.0));
  CHECK(r1.at("total").get<double>() == doctest::Approx(1.0 + 1.0 / 3.0));
  CHECK(r2.at("total") == 0.0);

  const auto vqa = write_file("vqa.jsonl", "{\"response\": \"cat\", \"gold\": \"cat\"}\n");
  REQUIRE(run_cli("score --input " + vqa.string() + " --task vqa --format-weight 0.5 --lenient",
                  "vqa") == 0);
  const auto v = json::parse(slurp(workdir() / "vqa.txt"));
  CHECK(v.at("task_reward") == 1.0);
  CHECK(v.at("format_reward") == 0.0);

  const auto malformed = write_file("bad.jsonl", "{\"response\": 3}\n");
  CHECK(run_cli("score --input " + malformed.string() + " --task vqa") == 2);
}

TEST_CASE("compare and ablate-m") {
  auto base = tiny_config();
  base["env"] = {{"regime", "conflict"}, {"dataset_size", 64}};
  const auto cmp = write_file(
      "cmp.json", json{{"base", base}, {"normalizers", {"grpo", "mars"}}, {"num_seeds", 1}}.dump());
  const fs::path out = workdir() / "cmp";
  REQUIRE(run_cli("compare --config " + cmp.string() + " --out " + out.string()) == 0);
  CHECK(slurp(out / "compare_summary.csv").find(",NA\n") != std::string::npos);
  CHECK(fs::exists(out / "compare.csv"));

  const auto abl = write_file(
      "abl.json", json{{"base", base}, {"m_values", {0, 2, 2}}, {"num_seeds", 1}}.dump());
  const fs::path aout = workdir() / "abl";
  REQUIRE(run_cli("ablate-m --config " + abl.string() + " --out " + aout.string(), "abl") == 0);
  CHECK(slurp(workdir() / "abl.txt").find("warning: duplicate M=2") != std::string::npos);
  const auto csv = slurp(aout / "ablate_m.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  const auto odd = write_file("odd.json", json{{"base", base}, {"m_values", {3}}}.dump());
  CHECK(run_cli("ablate-m --config " + odd.string() + " --out " + aout.string()) == 2);
}
