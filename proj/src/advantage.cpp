#include "mars/advantage.hpp"

#include <stdexcept>

namespace mars {

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
}

AdvantageVector normalize(const RolloutGroup& group, Normalizer tag, const GroupStats& stats,
                          double baseline, double denominator) {
  AdvantageVector adv{{}, tag, stats, baseline, denominator};
  adv.values.reserve(group.n());
  for (const auto& rec : group.multi) adv.values.push_back((rec.reward - baseline) / denominator);
  return adv;
}

}  // namespace

std::string to_string(Normalizer n) {
  switch (n) {
    case Normalizer::kGrpo: return "grpo";
    case Normalizer::kMars: return "mars";
    case Normalizer::kMeanBaseline: return "mean-baseline";
  }
  return "?";
}

Normalizer normalizer_from_string(const std::string& s) {
  if (s == "grpo") return Normalizer::kGrpo;
  if (s == "mars") return Normalizer::kMars;
  if (s == "mean-baseline") return Normalizer::kMeanBaseline;
  throw std::invalid_argument("unknown normalizer '" + s + "'");
}

AdvantageVector advantage_grpo(const RolloutGroup& group, double eps) {
  check_eps(eps);
  if (group.n() < 2) throw std::invalid_argument("a rollout group needs N >= 2");
  const GroupStats st = group_stats(group);
  return normalize(group, Normalizer::kGrpo, st, st.mean_multi, st.std_multi + eps);
}

AdvantageVector advantage_mars(const RolloutGroup& group, double eps) {
  check_eps(eps);
  if (group.n() < 2) throw std::invalid_argument("a rollout group needs N >= 2");
  if (group.m() == 0) {
    throw std::invalid_argument("advantage_mars needs mono rollouts (M >= 1); use advantage_grpo");
  }
  const GroupStats st = group_stats(group);
  return normalize(group, Normalizer::kMars, st, st.mean_union, st.std_union + eps);
}

AdvantageVector advantage_mean_baseline(const RolloutGroup& group) {
  if (group.n() < 2) throw std::invalid_argument("a rollout group needs N >= 2");
  const GroupStats st = group_stats(group);
  const double n = static_cast<double>(group.n());
  // r_j - (sum - r_j)/(n-1) = (r_j - mean) * n/(n-1)
  return normalize(group, Normalizer::kMeanBaseline, st, st.mean_multi, (n - 1.0) / n);
}

AdvantageVector compute_advantage(Normalizer normalizer, const RolloutGroup& group, double eps) {
  switch (normalizer) {
    case Normalizer::kGrpo: return advantage_grpo(group, eps);
    case Normalizer::kMars:
      return group.m() == 0 ? advantage_grpo(group, eps) : advantage_mars(group, eps);
    case Normalizer::kMeanBaseline: return advantage_mean_baseline(group);
  }
  throw std::invalid_argument("unknown normalizer");
}

MarsDecomposition decompose_mars(const RolloutGroup& group, double eps) {
  const AdvantageVector mars = advantage_mars(group, eps);
  const GroupStats& st = mars.stats;
  const double d = mars.denominator;
  MarsDecomposition out;
  out.alpha = st.alpha;
  out.delta_ig = *st.delta_ig;
  out.shift = (1.0 - st.alpha) * out.delta_ig / d;
  out.std_ratio = (st.std_multi + eps) / d;
  out.centered.reserve(group.n());
  for (const auto& rec : group.multi) out.centered.push_back((rec.reward - st.mean_multi) / d);
  return out;
}

bool is_degenerate_group(const RolloutGroup& group) {
  const double first = group.multi.front().reward;
  for (const auto& r : group.multi) {
    if (r.reward != first) return false;
  }
  for (const auto& r : group.mono) {
    if (r.reward != first) return false;
  }
  return true;
}

}  // namespace mars
