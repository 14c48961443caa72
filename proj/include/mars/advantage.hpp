#pragma once

#include <string>
#include <vector>

#include "mars/rollout.hpp"

namespace mars {

enum class Normalizer {
  kGrpo,          // group mean/std over the multi rollouts
  kMars,          // mean/std over the multi and mono rollouts together
  kMeanBaseline,  // leave-one-out mean, no scaling; exactly unbiased
};

std::string to_string(Normalizer n);
Normalizer normalizer_from_string(const std::string& s);

inline constexpr double kDefaultEps = 1e-6;

/// One advantage per multi-source rollout; mono rollouts never get one.
struct AdvantageVector {
  std::vector<double> values;
  Normalizer normalizer = Normalizer::kGrpo;
  GroupStats stats;
  double baseline = 0.0;
  double denominator = 1.0;
};

AdvantageVector advantage_grpo(const RolloutGroup& group, double eps = kDefaultEps);

/// Throws std::invalid_argument when the group has no mono rollouts; use
/// advantage_grpo for M = 0.
AdvantageVector advantage_mars(const RolloutGroup& group, double eps = kDefaultEps);

/// (r_j - mean of the other N-1 multi rewards), i.e. N/(N-1) (r_j - mean).
AdvantageVector advantage_mean_baseline(const RolloutGroup& group);

/// Dispatches on `normalizer`. MARS with M = 0 falls back to GRPO, which is
/// what it reduces to.
AdvantageVector compute_advantage(Normalizer normalizer, const RolloutGroup& group,
                                  double eps = kDefaultEps);

/// MARS advantages rewritten over one denominator d = std_union + eps:
///   mars[j] = centered[j] + shift
///   centered[j] = (r_j - mean_multi) / d
///   shift = (1 - alpha) * delta_ig / d
/// `std_ratio` = (std_multi + eps) / d converts centered parts into GRPO
/// advantages: grpo[j] = centered[j] / std_ratio.
struct MarsDecomposition {
  std::vector<double> centered;
  double shift = 0.0;
  double alpha = 1.0;
  double delta_ig = 0.0;
  double std_ratio = 1.0;
};

MarsDecomposition decompose_mars(const RolloutGroup& group, double eps = kDefaultEps);

/// True when all M + N rewards are equal (zero-variance filter).
bool is_degenerate_group(const RolloutGroup& group);

}  // namespace mars
