#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mars/advantage.hpp"
#include "mars/envs.hpp"
#include "mars/policy.hpp"
#include "mars/rollout.hpp"
#include "mars/trainer.hpp"

namespace mars {

/// Dense gradient of the expected multi-source reward, obtained by
/// enumerating the generator's joint law.
struct ExactGradient {
  std::size_t num_contexts = 0;
  std::size_t num_actions = 0;
  std::vector<double> values;  // row-major, policy shape

  double norm() const;
};

/// J(theta) = sum_c sum_a P(answer=a, c) pi(a|c) + format_weight.
double exact_objective(const PolicyTable& policy, const JointLaw& law, double format_weight = 1.0);

/// Throws std::invalid_argument when the policy shape does not match the
/// law's context layout.
ExactGradient exact_gradient(const PolicyTable& policy, const JointLaw& law,
                             double format_weight = 1.0);

double cosine_similarity(std::span<const double> a, std::span<const double> b);
/// ||estimate - reference|| / ||reference||.
double relative_l2_error(std::span<const double> estimate, std::span<const double> reference);

/// Named metric with the threshold it was judged against.
struct Metric {
  std::string name;
  double value = 0.0;
  std::string comparison;  // ">=" or "<="
  double threshold = 0.0;
  bool passed = false;
};

struct VerificationReport {
  std::string check;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  std::vector<Metric> metrics;
  nlohmann::json details = nlohmann::json::object();

  void expect_at_least(const std::string& name, double value, double threshold);
  void expect_at_most(const std::string& name, double value, double threshold);
  bool passed() const;
  nlohmann::json to_json() const;
};

/// Random logits, i.i.d. normal with standard deviation `scale`.
PolicyTable random_policy(std::size_t num_contexts, std::size_t num_actions, double scale,
                          Rng& rng);

/// Analytic log_prob_grad against central differences of log pi, and
/// exact_gradient against central differences of exact_objective.
VerificationReport verify_gradcheck(std::size_t triples, std::size_t policies,
                                    std::uint64_t seed);

struct EstimatorSetup {
  std::size_t rollouts_per_group = 12;
  std::size_t mono_per_source = 1;
  double eps = kDefaultEps;
  double format_weight = 1.0;
};

/// Monte Carlo mean of per-group estimates (1/N) sum_j A_j score_j with
/// fresh instances drawn from the generator.
struct EstimatorAverage {
  std::vector<double> mean;
  std::vector<double> standard_error;  // per coordinate
  double standard_error_norm = 0.0;    // sqrt(sum of squared standard errors)
  std::size_t samples = 0;
};

EstimatorAverage estimate_gradient(const PolicyTable& policy, const EnvSpec& env,
                                   Normalizer estimator, std::size_t samples, std::uint64_t seed,
                                   const EstimatorSetup& setup = {});

/// Compares the Monte Carlo estimator average with exact_gradient.
/// Thresholds: mean-baseline cosine >= 0.999 and relative L2 <= 0.02;
/// grpo/mars cosine >= 0.99. When the exact gradient vanishes, the estimate
/// norm must be <= 3 standard errors instead.
VerificationReport verify_unbiasedness(const PolicyTable& policy, const EnvSpec& env,
                                       Normalizer estimator, std::size_t samples,
                                       std::uint64_t seed, const EstimatorSetup& setup = {});

/// Batch gradient from advantage_mars against the same gradient rebuilt from
/// decompose_mars (centered part plus shift times the mean score direction).
/// Also checks that centered / std_ratio rebuilds the GRPO gradient.
/// Groups must all have M >= 1. Residual threshold 1e-10.
VerificationReport verify_decomposition(const PolicyTable& policy,
                                        const std::vector<RolloutGroup>& groups,
                                        double eps = kDefaultEps);

/// Synthetic groups on random multi contexts: N multi and M mono records with
/// random actions and rewards uniform in [reward_lo, reward_hi].
std::vector<RolloutGroup> random_groups(const PolicyTable& policy, std::size_t count,
                                        std::size_t n, std::size_t m, double reward_lo,
                                        double reward_hi, Rng& rng);

struct RunStatistics {
  std::string run;
  double max_multi_reward = 0.0;
  double mean_multi_reward = 0.0;
  double max_mono_reward = 0.0;
  std::vector<double> delta_ig;  // trajectory over logged iterations
};

/// Final-iteration reward statistics per run. Throws on an empty log.
std::vector<RunStatistics> report_statistics(
    const std::vector<std::pair<std::string, std::vector<TrainLogRow>>>& runs);
/// Rows max/mean multi reward and max mono reward, one column per run.
std::string format_statistics_table(const std::vector<RunStatistics>& stats);

}  // namespace mars
