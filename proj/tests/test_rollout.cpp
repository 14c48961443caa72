#include <cmath>
#include <vector>

#include "doctest.h"
#include "mars/rollout.hpp"

namespace {

mars::TaskInstance instance_for(const mars::ContextLayout& layout, std::vector<std::size_t> sym,
                                std::size_t answer) {
  mars::TaskInstance inst;
  inst.answer = answer;
  inst.symbols = sym;
  inst.multi_context = layout.multi_context(sym);
  for (std::size_t s = 0; s < sym.size(); ++s) inst.mono_contexts.push_back(layout.mono_context(s, sym[s]));
  return inst;
}

// Group whose rewards are given directly; actions are placeholders.
mars::RolloutGroup rewards_group(std::vector<double> multi, std::vector<double> mono) {
  mars::RolloutGroup g;
  for (double r : multi) g.multi.push_back({0, r, 0, 0});
  for (std::size_t i = 0; i < mono.size(); ++i) g.mono.push_back({i % 2, 0, mono[i], 0, 0});
  return g;
}

}  // namespace

TEST_CASE("group statistics examples") {
  auto st = mars::group_stats(rewards_group({1, 1, 1}, {1}));
  CHECK(st.mean_multi == 1);
  CHECK(*st.mean_mono == 1);
  CHECK(st.mean_union == 1);
  CHECK(st.std_multi == 0);
  CHECK(st.std_union == 0);
  CHECK(*st.delta_ig == 0);

  st = mars::group_stats(rewards_group({1.0, 0.5, 0.0}, {1.0}));
  CHECK(st.mean_union == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(*st.delta_ig == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(st.alpha == 0.75);
  CHECK(st.std_union == doctest::Approx(std::sqrt(0.171875)).epsilon(1e-15));

  st = mars::group_stats(rewards_group({1.62, 1.62}, {1.63, 1.63}));
  CHECK(*st.delta_ig == doctest::Approx(-0.01).epsilon(1e-12));

  st = mars::group_stats(rewards_group({2, 0}, {}));
  CHECK(!st.mean_mono);
  CHECK(!st.delta_ig);
  CHECK(st.alpha == 1.0);
  CHECK(st.mean_union == 1.0);
  CHECK(st.std_multi == 1.0);
}

TEST_CASE("union mean identity") {
  mars::Rng rng = mars::make_rng(31, {});
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 2 + mars::uniform_index(rng, 14), m = 1 + mars::uniform_index(rng, 8);
    std::vector<double> multi(n), mono(m);
    for (double& r : multi) r = 2 * mars::uniform01(rng);
    for (double& r : mono) r = 2 * mars::uniform01(rng);
    const auto st = mars::group_stats(rewards_group(multi, mono));
    CHECK(st.alpha == doctest::Approx(double(n) / double(n + m)).epsilon(1e-15));
    CHECK(std::abs(st.mean_union - (st.alpha * st.mean_multi + (1 - st.alpha) * *st.mean_mono)) <=
          1e-12);
  }
}

TEST_CASE("population statistics") {
  CHECK(mars::population_std({2, 1, 0}) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(mars::population_mean({1, 2, 3, 6}) == 3);
  CHECK(mars::population_std({4}) == 0);
}

TEST_CASE("sample_group shape and contexts") {
  const auto spec = mars::conflict_spec(2, 4);
  const mars::ContextLayout layout(spec);
  const mars::PolicyTable policy(layout.num_contexts(), 4);
  const auto inst = instance_for(layout, {2, 3}, 2);
  mars::Rng rng = mars::make_rng(32, {});
  const auto g = mars::sample_group(policy, inst, 12, 2, rng);
  CHECK(g.n() == 12);
  CHECK(g.m() == 4);
  for (const auto& r : g.multi) {
    CHECK(r.context == inst.multi_context);
    CHECK(r.reward == mars::env_reward(inst, r.action));
  }
  for (const auto& r : g.mono) {
    CHECK(r.context == inst.mono_contexts[r.source]);
    CHECK(r.reward == mars::env_reward(inst, r.action));
  }
  CHECK(mars::sample_group(policy, inst, 5, 0, rng).m() == 0);
  CHECK_THROWS_AS(mars::sample_group(policy, inst, 1, 1, rng), std::invalid_argument);
}

TEST_CASE("multi draws do not depend on the mono count") {
  const auto spec = mars::conflict_spec(2, 4);
  const mars::ContextLayout layout(spec);
  mars::PolicyTable policy(layout.num_contexts(), 4);
  mars::Rng init = mars::make_rng(33, {});
  for (double& v : policy.mutable_row(5)) v = mars::normal01(init);
  const auto inst = instance_for(layout, {1, 1}, 1);
  mars::Rng r0 = mars::make_rng(34, {}), r3 = mars::make_rng(34, {});
  const auto a = mars::sample_group(policy, inst, 12, 0, r0);
  const auto b = mars::sample_group(policy, inst, 12, 3, r3);
  for (std::size_t j = 0; j < 12; ++j) CHECK(a.multi[j].action == b.multi[j].action);
  mars::Rng r4 = mars::make_rng(34, {});
  const auto c = mars::sample_group(policy, inst, 12, 3, r4);
  CHECK(mars::group_to_json(b) == mars::group_to_json(c));
}

TEST_CASE("assemble_group enforces invariants") {
  const mars::ContextLayout layout(2, 3);
  const auto inst = instance_for(layout, {0, 2}, 0);
  const mars::MultiRecord good{0, 2.0, inst.multi_context, 4};
  CHECK_THROWS_AS(mars::assemble_group(inst, {good}, {}), std::invalid_argument);
  CHECK_NOTHROW(mars::assemble_group(inst, {good, good}, {}));
  mars::MultiRecord stale = good;
  stale.policy_version = 3;
  CHECK_THROWS_AS(mars::assemble_group(inst, {good, stale}, {}), std::invalid_argument);
  const mars::MonoRecord mono_ok{1, 0, 1.0, inst.mono_contexts[1], 4};
  CHECK_NOTHROW(mars::assemble_group(inst, {good, good}, {mono_ok}));
  mars::MonoRecord wrong_ctx = mono_ok;
  wrong_ctx.context = inst.mono_contexts[0];
  CHECK_THROWS_AS(mars::assemble_group(inst, {good, good}, {wrong_ctx}), std::invalid_argument);
  mars::MonoRecord old = mono_ok;
  old.policy_version = 1;
  CHECK_THROWS_AS(mars::assemble_group(inst, {good, good}, {old}), std::invalid_argument);
  mars::MultiRecord off = good;
  off.context = inst.mono_contexts[0];
  CHECK_THROWS_AS(mars::assemble_group(inst, {good, off}, {}), std::invalid_argument);
}
