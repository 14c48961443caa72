#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mars/analysis.hpp"
#include "mars/trainer.hpp"

namespace {

mars::TrainConfig small_config(mars::Normalizer n = mars::Normalizer::kMars) {
  mars::TrainConfig c;
  c.env = mars::conflict_spec(2, 4);
  c.env.dataset_size = 256;
  c.normalizer = n;
  c.iterations = 20;
  c.batch_instances = 16;
  c.eval_instances = 2000;
  c.seed = 3;
  return c;
}

std::string log_text(const mars::TrainResult& r) {
  std::ostringstream s;
  mars::write_log_csv(s, r.log);
  return s.str();
}

struct ThreadOverride {
  explicit ThreadOverride(const char* v) { setenv("MARS_LAB_THREADS", v, 1); }
  ~ThreadOverride() { unsetenv("MARS_LAB_THREADS"); }
};

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(mars::validate(c));
  c.rollouts_per_group = 1;
  CHECK_THROWS_AS(mars::validate(c), std::invalid_argument);
  c = small_config();
  c.iterations = 0;
  CHECK_THROWS_AS(mars::validate(c), std::invalid_argument);
  c = small_config();
  c.learning_rate = -1;
  CHECK_THROWS_AS(mars::validate(c), std::invalid_argument);
  c = small_config();
  c.batch_instances = 0;
  CHECK_THROWS_AS(mars::validate(c), std::invalid_argument);
}

TEST_CASE("config JSON round trip and schema checks") {
  auto c = small_config(mars::Normalizer::kGrpo);
  c.kl_coeff = 0.1;
  const auto j = mars::train_config_to_json(c);
  CHECK(j.at("advantage") == "grpo");
  CHECK(mars::train_config_to_json(mars::train_config_from_json(j)) == j);
  CHECK(mars::train_config_from_json({{"normalizer", "mars"}}).normalizer == mars::Normalizer::kMars);
  CHECK_THROWS_AS(mars::train_config_from_json({{"advantage", "mars"}, {"normalizer", "mars"}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(mars::train_config_from_json({{"lerning_rate", 1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(mars::train_config_from_json({{"rollouts_per_group", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(mars::train_config_from_json({{"advantage", "dapo"}}), std::invalid_argument);
  CHECK_THROWS(mars::train_config_from_json({{"iterations", "many"}}));
}

TEST_CASE("zero learning rate leaves the policy unchanged") {
  auto c = small_config();
  c.learning_rate = 0.0;
  const auto r = mars::train(c);
  CHECK(std::equal(r.policy.theta().begin(), r.policy.theta().end(), r.initial_policy.theta().begin()));
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const auto c = small_config();
  mars::TrainResult a, b, d;
  {
    ThreadOverride one("1");
    a = mars::train(c);
    b = mars::train(c);
  }
  {
    ThreadOverride four("4");
    d = mars::train(c);
  }
  CHECK(log_text(a) == log_text(b));
  CHECK(log_text(a) == log_text(d));
  CHECK(a.policy == d.policy);
  CHECK(a.rollout_hashes == d.rollout_hashes);
  CHECK(a.final_multi_accuracy == d.final_multi_accuracy);
}

TEST_CASE("normalizers differ only in the advantage call") {
  auto c = small_config(mars::Normalizer::kGrpo);
  c.iterations = 3;
  const auto g = mars::train(c);
  c.normalizer = mars::Normalizer::kMars;
  const auto m = mars::train(c);
  REQUIRE(g.rollout_hashes.size() == 3);
  CHECK(g.rollout_hashes[0] == m.rollout_hashes[0]);
  CHECK(g.log[0].mean_multi_reward == m.log[0].mean_multi_reward);
  CHECK(g.log[0].mean_mono_reward == m.log[0].mean_mono_reward);
}

TEST_CASE("mono records never contribute score terms") {
  for (auto n : {mars::Normalizer::kGrpo, mars::Normalizer::kMars, mars::Normalizer::kMeanBaseline}) {
    auto c = small_config(n);
    c.mono_per_source = 3;
    const auto r = mars::train(c);
    for (std::size_t t : r.score_terms) CHECK(t == c.batch_instances * c.rollouts_per_group);
  }
}

TEST_CASE("degenerate-group filter drops whole groups") {
  auto c = small_config();
  c.filter_degenerate_groups = true;
  c.mono_per_source = 0;
  c.iterations = 10;
  const auto r = mars::train(c);
  bool dropped = false;
  for (std::size_t t : r.score_terms) {
    CHECK(t % c.rollouts_per_group == 0);
    dropped = dropped || t < c.batch_instances * c.rollouts_per_group;
  }
  CHECK(dropped);
}

TEST_CASE("batch gradient is invariant to group order") {
  const auto spec = mars::conflict_spec(2, 4);
  const mars::ContextLayout layout(spec);
  mars::Rng rng = mars::make_rng(51, {});
  const auto policy = mars::random_policy(layout.num_contexts(), 4, 1.0, rng);
  const auto data = mars::generate(spec, rng, 32);
  std::vector<mars::RolloutGroup> groups;
  for (const auto& inst : data) groups.push_back(mars::sample_group(policy, inst, 12, 1, rng));
  auto advantages = [&](const std::vector<mars::RolloutGroup>& gs) {
    std::vector<mars::AdvantageVector> out;
    for (const auto& g : gs) out.push_back(mars::advantage_mars(g));
    return out;
  };
  const auto g1 = mars::batch_gradient(policy, groups, advantages(groups), 32);
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
  std::swap(order[3], order[17]);
  std::vector<mars::RolloutGroup> shuffled;
  for (std::size_t i : order) shuffled.push_back(groups[i]);
  const auto g2 = mars::batch_gradient(policy, shuffled, advantages(shuffled), 32);
  for (std::size_t i = 0; i < g1.values().size(); ++i) {
    CHECK(std::abs(g1.values()[i] - g2.values()[i]) <= 1e-10);
  }
  CHECK(g1.terms() == 32 * 12);
}

TEST_CASE("promotion training improves the multi reward") {
  mars::TrainConfig c;
  c.env = mars::promotion_spec();
  c.normalizer = mars::Normalizer::kMars;
  c.eval_instances = 2000;
  const auto r = mars::train(c);
  REQUIRE(r.log.size() == c.iterations);
  CHECK(r.log.back().mean_multi_reward > r.log.front().mean_multi_reward);
  CHECK(r.final_multi_accuracy == 1.0);
  CHECK(r.log.back().delta_ig > 0);
}

TEST_CASE("zero-information training cannot beat chance") {
  auto c = small_config(mars::Normalizer::kGrpo);
  c.env = mars::conflict_spec(2, 4, 0.25, 0.25);
  c.env.sources[0].noise = mars::NoiseModel::kWrongAnswer;
  c.iterations = 50;
  const auto r = mars::train(c);
  const mars::JointLaw law(c.env);
  CHECK(law.greedy_multi_accuracy(r.policy) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(mars::exact_objective(r.policy, law, 0.0) == doctest::Approx(0.25).epsilon(1e-12));
  // The policy only drifts by sampling noise: its mean entropy stays close to ln 4.
  CHECK(r.log.back().mean_entropy > 0.9 * std::log(4.0));
}

TEST_CASE("log rows") {
  auto c = small_config();
  c.log_every = 7;
  const auto r = mars::train(c);
  std::vector<std::size_t> its;
  for (const auto& row : r.log) {
    its.push_back(row.iteration);
    CHECK(row.mean_multi_reward <= row.max_multi_reward);
    CHECK(row.max_multi_reward <= 1.0 + c.format_weight);
    CHECK(row.mean_multi_reward >= 0.0);
    CHECK(row.delta_ig == doctest::Approx(row.mean_multi_reward - row.mean_mono_reward));
  }
  CHECK(its == std::vector<std::size_t>{0, 7, 14, 19});
  const std::string text = log_text(r);
  CHECK(text.rfind(std::string(mars::kLogCsvHeader) + "\n", 0) == 0);

  c.mono_per_source = 0;
  const auto g = mars::train(c);
  CHECK(std::isnan(g.log[0].delta_ig));
  CHECK(log_text(g).find(",nan,nan,nan,") != std::string::npos);
}

TEST_CASE("non-finite advantages abort the update") {
  const mars::ContextLayout layout(2, 4);
  const mars::PolicyTable policy(layout.num_contexts(), 4);
  mars::RolloutGroup g;
  g.multi = {{0, 1.0, 0, 0}, {1, std::nan(""), 0, 0}};
  const std::vector<mars::RolloutGroup> groups{g};
  const std::vector<mars::AdvantageVector> adv{mars::advantage_grpo(g)};
  CHECK_THROWS_AS(mars::batch_gradient(policy, groups, adv, 1), mars::NumericError);
}

TEST_CASE("KL penalty keeps the policy near the initial one") {
  auto c = small_config();
  c.iterations = 40;
  const auto free = mars::train(c);
  c.kl_coeff = 5.0;
  const auto tied = mars::train(c);
  auto dist = [](const mars::TrainResult& r) {
    double s = 0;
    for (double v : r.policy.theta()) s += v * v;
    return std::sqrt(s);
  };
  CHECK(dist(tied) < dist(free));
}

TEST_CASE("PPO mode trains") {
  auto c = small_config();
  c.ppo_clip = 0.2;
  c.ppo_minibatches = 4;
  c.iterations = 60;
  const auto r = mars::train(c);
  CHECK(r.log.back().mean_multi_reward > r.log.front().mean_multi_reward);
  for (std::size_t t : r.score_terms) CHECK(t == c.batch_instances * c.rollouts_per_group);
}

TEST_CASE("evaluation modes") {
  const auto spec = mars::promotion_spec();
  const mars::ContextLayout layout(spec);
  mars::PolicyTable optimal(layout.num_contexts(), 2);
  for (mars::ContextId c = 0; c < layout.num_multi_contexts(); ++c) {
    const auto sym = layout.decode_multi(c);
    optimal.mutable_row(c)[sym[0] ^ sym[1]] = 5.0;
  }
  mars::Rng rng = mars::make_rng(52, {});
  const auto xs = mars::generate(spec, rng, 20000);
  CHECK(mars::evaluate(optimal, xs, mars::EvalMode::kMulti) == 1.0);
  const double u = mars::evaluate(optimal, xs, mars::EvalMode::kUnion);
  CHECK(std::abs(u - 0.5) <= 4 * std::sqrt(0.25 / 20000));
  CHECK(std::abs(mars::best_mono_accuracy(optimal, xs) - 0.5) <= 4 * std::sqrt(0.25 / 20000));

  const auto conflict = mars::conflict_spec(2, 4);
  const auto cx = mars::generate(conflict, rng, 40000);
  const mars::PolicyTable uniform(mars::ContextLayout(conflict).num_contexts(), 4);
  CHECK(std::abs(mars::evaluate(uniform, cx, mars::EvalMode::kMulti) - 0.25) <=
        4 * std::sqrt(0.25 * 0.75 / 40000));
  for (int t = 0; t < 20; ++t) {
    const auto p = mars::random_policy(mars::ContextLayout(conflict).num_contexts(), 4, 2.0, rng);
    CHECK(mars::evaluate(p, cx, mars::EvalMode::kUnion) >= mars::best_mono_accuracy(p, cx));
    CHECK(mars::best_mono_accuracy(p, cx) >= mars::evaluate_mono(p, cx, 1));
  }
  CHECK_THROWS_AS(mars::evaluate(uniform, {}, mars::EvalMode::kMulti), std::invalid_argument);
}
