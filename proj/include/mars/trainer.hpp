#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mars/advantage.hpp"
#include "mars/envs.hpp"
#include "mars/policy.hpp"
#include "mars/rollout.hpp"

namespace mars {

/// Raised when a loss or gradient goes non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  EnvSpec env = conflict_spec();
  Normalizer normalizer = Normalizer::kMars;
  std::size_t rollouts_per_group = 12;  // N
  std::size_t mono_per_source = 1;      // M = num_sources * mono_per_source
  double learning_rate = 0.5;
  std::size_t iterations = 300;
  std::size_t batch_instances = 32;
  double eps = kDefaultEps;
  std::uint64_t seed = 0;
  double kl_coeff = 0.0;  // penalty on KL(pi || pi_initial) over visited contexts
  std::size_t log_every = 1;
  double format_weight = 1.0;
  bool filter_degenerate_groups = false;
  double ppo_clip = 0.0;             // > 0 enables single-epoch PPO-clip
  std::size_t ppo_minibatches = 1;  // only with ppo_clip > 0
  std::size_t eval_instances = 10000;

  std::size_t mono_count() const { return env.num_sources * mono_per_source; }
};

/// Throws std::invalid_argument on the first violated constraint.
void validate(const TrainConfig& config);
nlohmann::json train_config_to_json(const TrainConfig& config);
/// Rejects unknown keys; missing keys take the defaults above.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainLogRow {
  std::size_t iteration = 0;
  double mean_multi_reward = 0.0;
  double max_multi_reward = 0.0;
  double mean_mono_reward = 0.0;  // NaN when M = 0
  double max_mono_reward = 0.0;   // NaN when M = 0
  double delta_ig = 0.0;          // NaN when M = 0
  double mean_entropy = 0.0;
  double grad_norm = 0.0;
};

/// Column order of log.csv.
inline constexpr const char* kLogCsvHeader =
    "iteration,mean_multi_reward,max_multi_reward,mean_mono_reward,max_mono_reward,delta_ig,"
    "mean_entropy,grad_norm";

void write_log_csv(std::ostream& out, const std::vector<TrainLogRow>& rows);
/// Fixed-precision rendering shared by every CSV writer; NaN prints as "nan".
std::string format_number(double v);

struct TrainResult {
  PolicyTable policy;
  PolicyTable initial_policy;
  std::vector<TrainLogRow> log;
  std::vector<std::uint64_t> rollout_hashes;  // one per iteration
  std::vector<std::size_t> score_terms;       // score terms accumulated per iteration
  double final_multi_accuracy = 0.0;
  double final_union_accuracy = 0.0;
  double final_best_mono_accuracy = 0.0;
};

struct TrainHooks {
  std::function<void(std::size_t iteration, const std::vector<RolloutGroup>&)> on_groups;
};

/// Training set and held-out evaluation set for a config. Both depend only
/// on config.env (its seed included).
std::vector<TaskInstance> training_set(const TrainConfig& config);
std::vector<TaskInstance> evaluation_set(const TrainConfig& config);

/// Accumulates (1/(B*N)) sum_j A_j * score_j over the multi rollouts of the
/// given groups, in order. Mono rollouts contribute nothing.
GradientAccumulator batch_gradient(const PolicyTable& policy,
                                   const std::vector<RolloutGroup>& groups,
                                   const std::vector<AdvantageVector>& advantages,
                                   std::size_t batch_instances);

TrainResult train(const TrainConfig& config, const TrainHooks& hooks = {});

enum class EvalMode { kMulti, kUnion };

/// Greedy-action task accuracy (format bonus excluded). Union counts an
/// instance correct if the greedy action on any mono context is correct.
double evaluate(const PolicyTable& policy, const std::vector<TaskInstance>& instances,
                EvalMode mode);
/// Greedy accuracy using only `source`'s mono context.
double evaluate_mono(const PolicyTable& policy, const std::vector<TaskInstance>& instances,
                     std::size_t source);
double best_mono_accuracy(const PolicyTable& policy, const std::vector<TaskInstance>& instances);

}  // namespace mars
