#include "mars/rollout.hpp"

#include <cmath>
#include <stdexcept>

namespace mars {

RolloutGroup assemble_group(const TaskInstance& instance, std::vector<MultiRecord> multi,
                            std::vector<MonoRecord> mono) {
  if (multi.size() < 2) throw std::invalid_argument("a rollout group needs N >= 2");
  const std::uint64_t version = multi.front().policy_version;
  for (const auto& r : multi) {
    if (r.policy_version != version) {
      throw std::invalid_argument("rollouts from different policy versions in one group");
    }
    if (r.context != instance.multi_context) {
      throw std::invalid_argument("multi rollout on a foreign context");
    }
  }
  for (const auto& r : mono) {
    if (r.policy_version != version) {
      throw std::invalid_argument("rollouts from different policy versions in one group");
    }
    if (r.source >= instance.mono_contexts.size() ||
        r.context != instance.mono_contexts[r.source]) {
      throw std::invalid_argument("mono rollout context does not match its source");
    }
  }
  return RolloutGroup{instance.id, version, std::move(multi), std::move(mono)};
}

RolloutGroup sample_group(const PolicyTable& policy, const TaskInstance& instance, std::size_t n,
                          std::size_t mono_per_source, Rng& rng, double format_weight) {
  if (n < 2) throw std::invalid_argument("a rollout group needs N >= 2");
  Rng multi_rng(mix_seed(rng()));
  Rng mono_rng(mix_seed(rng()));
  const auto version = policy.version();

  std::vector<MultiRecord> multi(n);
  const auto probs = action_probs(policy, instance.multi_context);
  for (auto& rec : multi) {
    rec.action = sample_from(probs, multi_rng);
    rec.reward = env_reward(instance, rec.action, format_weight);
    rec.context = instance.multi_context;
    rec.policy_version = version;
  }

  std::vector<MonoRecord> mono;
  mono.reserve(instance.mono_contexts.size() * mono_per_source);
  for (std::size_t s = 0; s < instance.mono_contexts.size(); ++s) {
    const ContextId ctx = instance.mono_contexts[s];
    const auto mono_probs = action_probs(policy, ctx);
    for (std::size_t k = 0; k < mono_per_source; ++k) {
      const ActionId a = sample_from(mono_probs, mono_rng);
      mono.push_back({s, a, env_reward(instance, a, format_weight), ctx, version});
    }
  }
  return RolloutGroup{instance.id, version, std::move(multi), std::move(mono)};
}

double population_mean(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty set");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  const double mu = population_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

std::vector<double> multi_rewards(const RolloutGroup& group) {
  std::vector<double> r;
  r.reserve(group.multi.size());
  for (const auto& rec : group.multi) r.push_back(rec.reward);
  return r;
}

std::vector<double> mono_rewards(const RolloutGroup& group) {
  std::vector<double> r;
  r.reserve(group.mono.size());
  for (const auto& rec : group.mono) r.push_back(rec.reward);
  return r;
}

GroupStats group_stats(const RolloutGroup& group) {
  const auto multi = multi_rewards(group);
  const auto mono = mono_rewards(group);
  GroupStats st;
  st.mean_multi = population_mean(multi);
  st.std_multi = population_std(multi);
  std::vector<double> uni = multi;
  uni.insert(uni.end(), mono.begin(), mono.end());
  st.mean_union = population_mean(uni);
  st.std_union = population_std(uni);
  st.alpha = static_cast<double>(multi.size()) / static_cast<double>(uni.size());
  if (!mono.empty()) {
    st.mean_mono = population_mean(mono);
    st.delta_ig = st.mean_multi - *st.mean_mono;
  }
  return st;
}

nlohmann::json group_to_json(const RolloutGroup& group) {
  nlohmann::json multi = nlohmann::json::array();
  for (const auto& r : group.multi) {
    multi.push_back({{"action", r.action}, {"reward", r.reward}, {"context", r.context}});
  }
  nlohmann::json mono = nlohmann::json::array();
  for (const auto& r : group.mono) {
    mono.push_back({{"source", r.source},
                    {"action", r.action},
                    {"reward", r.reward},
                    {"context", r.context}});
  }
  return {{"instance_id", group.instance_id},
          {"policy_version", group.policy_version},
          {"multi", std::move(multi)},
          {"mono", std::move(mono)}};
}

}  // namespace mars
