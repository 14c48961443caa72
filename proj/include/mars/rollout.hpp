#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mars/envs.hpp"
#include "mars/policy.hpp"

namespace mars {

struct MultiRecord {
  ActionId action = 0;
  double reward = 0.0;
  ContextId context = 0;
  std::uint64_t policy_version = 0;
};

struct MonoRecord {
  std::size_t source = 0;
  ActionId action = 0;
  double reward = 0.0;
  ContextId context = 0;
  std::uint64_t policy_version = 0;
};

/// N multi-source and M mono-source rollouts for one instance, all drawn from
/// one policy snapshot. Mono records only feed normalization statistics.
struct RolloutGroup {
  std::size_t instance_id = 0;
  std::uint64_t policy_version = 0;
  std::vector<MultiRecord> multi;
  std::vector<MonoRecord> mono;

  std::size_t n() const { return multi.size(); }
  std::size_t m() const { return mono.size(); }
};

/// Builds a group after checking its invariants: N >= 2, one policy version
/// across all records, each mono context belongs to its source.
/// Throws std::invalid_argument otherwise.
RolloutGroup assemble_group(const TaskInstance& instance, std::vector<MultiRecord> multi,
                            std::vector<MonoRecord> mono);

/// Samples N multi rollouts on the instance's multi context and
/// `mono_per_source` rollouts on each source's mono context. Multi and mono
/// draws use separate sub-streams split off `rng`, so the multi actions do
/// not depend on the mono count.
RolloutGroup sample_group(const PolicyTable& policy, const TaskInstance& instance, std::size_t n,
                          std::size_t mono_per_source, Rng& rng, double format_weight = 1.0);

struct GroupStats {
  double mean_multi = 0.0;
  double std_multi = 0.0;
  std::optional<double> mean_mono;  // absent when M = 0
  double mean_union = 0.0;
  double std_union = 0.0;
  std::optional<double> delta_ig;   // mean_multi - mean_mono
  double alpha = 1.0;               // N / (M + N)
};

/// Population (divide-by-count) standard deviations throughout.
GroupStats group_stats(const RolloutGroup& group);

double population_mean(const std::vector<double>& xs);
double population_std(const std::vector<double>& xs);
std::vector<double> multi_rewards(const RolloutGroup& group);
std::vector<double> mono_rewards(const RolloutGroup& group);

nlohmann::json group_to_json(const RolloutGroup& group);

}  // namespace mars
