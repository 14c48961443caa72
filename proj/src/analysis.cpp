#include "mars/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mars/parallel.hpp"

namespace mars {

namespace {

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double log_softmax_at(std::span<const double> logits, std::size_t a) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  return logits[a] - m - std::log(z);
}

double relative_difference(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double scale = std::max({l2(a), l2(b), 1e-300});
  return std::sqrt(diff) / scale;
}

// Accumulates (1/N) sum_j weights[j] * score_j for one group into `out`.
void add_group_gradient(const PolicyTable& policy, const RolloutGroup& g,
                        const std::vector<double>& weights, double extra_uniform,
                        std::vector<double>& out) {
  const ContextId c = g.multi.front().context;
  const auto probs = action_probs(policy, c);
  const std::size_t A = policy.num_actions();
  const double inv_n = 1.0 / static_cast<double>(g.n());
  for (std::size_t j = 0; j < g.n(); ++j) {
    const auto score = log_prob_grad(probs, c, g.multi[j].action);
    const double w = (weights[j] + extra_uniform) * inv_n;
    for (std::size_t b = 0; b < A; ++b) out[c * A + b] += w * score.row[b];
  }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

double ExactGradient::norm() const { return l2(values); }

double exact_objective(const PolicyTable& policy, const JointLaw& law, double format_weight) {
  const auto& layout = law.layout();
  double j = format_weight;
  for (ContextId c = 0; c < layout.num_multi_contexts(); ++c) {
    const auto p = action_probs(policy, c);
    for (std::size_t a = 0; a < layout.num_answers(); ++a) j += law.joint(c, a) * p[a];
  }
  return j;
}

ExactGradient exact_gradient(const PolicyTable& policy, const JointLaw& law,
                             double format_weight) {
  const auto& layout = law.layout();
  if (policy.num_contexts() != layout.num_contexts() ||
      policy.num_actions() != layout.num_answers()) {
    throw std::invalid_argument("policy shape does not match the environment layout");
  }
  if (layout.num_multi_contexts() > kMaxEnumerableContexts) {
    throw std::invalid_argument("context space too large for exact enumeration");
  }
  const std::size_t A = layout.num_answers();
  ExactGradient g{policy.num_contexts(), A, std::vector<double>(policy.num_contexts() * A, 0.0)};
  for (ContextId c = 0; c < layout.num_multi_contexts(); ++c) {
    const auto p = action_probs(policy, c);
    const double pc = law.context_prob(c);
    // sum_a P(c) rbar(c,a) pi(a|c) (e_a - pi)
    double mean = 0.0;
    std::vector<double> weighted(A);
    for (std::size_t a = 0; a < A; ++a) {
      weighted[a] = (law.joint(c, a) + pc * format_weight) * p[a];
      mean += weighted[a];
    }
    for (std::size_t b = 0; b < A; ++b) g.values[c * A + b] = weighted[b] - mean * p[b];
  }
  return g;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double denom = l2(a) * l2(b);
  return denom > 0.0 ? dot / denom : 0.0;
}

double relative_l2_error(std::span<const double> estimate, std::span<const double> reference) {
  double diff = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    diff += (estimate[i] - reference[i]) * (estimate[i] - reference[i]);
  }
  return std::sqrt(diff) / l2(reference);
}

void VerificationReport::expect_at_least(const std::string& name, double value, double threshold) {
  metrics.push_back({name, value, ">=", threshold, value >= threshold});
}

void VerificationReport::expect_at_most(const std::string& name, double value, double threshold) {
  metrics.push_back({name, value, "<=", threshold, value <= threshold});
}

bool VerificationReport::passed() const {
  return std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.passed; });
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : metrics) {
    ms.push_back({{"name", m.name},
                  {"value", m.value},
                  {"comparison", m.comparison},
                  {"threshold", m.threshold},
                  {"passed", m.passed}});
  }
  return {{"check", check},   {"seed", seed},       {"samples", samples},
          {"metrics", ms},    {"details", details}, {"passed", passed()}};
}

PolicyTable random_policy(std::size_t num_contexts, std::size_t num_actions, double scale,
                          Rng& rng) {
  PolicyTable p(num_contexts, num_actions);
  for (ContextId c = 0; c < num_contexts; ++c) {
    for (double& v : p.mutable_row(c)) v = scale * normal01(rng);
  }
  return p;
}

VerificationReport verify_gradcheck(std::size_t triples, std::size_t policies,
                                    std::uint64_t seed) {
  VerificationReport report;
  report.check = "gradcheck";
  report.seed = seed;
  report.samples = triples;

  constexpr double kStep = 1e-6;
  double worst_score = 0.0;
  double worst_row_sum = 0.0;
  for (std::size_t t = 0; t < triples; ++t) {
    Rng rng = make_rng(seed, {1, t});
    const std::size_t contexts = 1 + uniform_index(rng, 6);
    const std::size_t actions = 2 + uniform_index(rng, 7);
    PolicyTable policy = random_policy(contexts, actions, 2.0, rng);
    const ContextId c = uniform_index(rng, contexts);
    const ActionId a = uniform_index(rng, actions);
    const auto analytic = log_prob_grad(policy, c, a);
    std::vector<double> numeric(actions);
    for (std::size_t b = 0; b < actions; ++b) {
      const double saved = policy.row(c)[b];
      policy.mutable_row(c)[b] = saved + kStep;
      const double up = log_softmax_at(policy.row(c), a);
      policy.mutable_row(c)[b] = saved - kStep;
      const double down = log_softmax_at(policy.row(c), a);
      policy.mutable_row(c)[b] = saved;
      numeric[b] = (up - down) / (2.0 * kStep);
    }
    worst_score = std::max(worst_score, relative_difference(analytic.row, numeric));
    double row_sum = 0.0;
    for (double v : analytic.row) row_sum += v;
    worst_row_sum = std::max(worst_row_sum, std::abs(row_sum));
  }
  report.expect_at_most("log_prob_grad_max_relative_error", worst_score, 1e-5);
  report.expect_at_most("score_row_sum_max_abs", worst_row_sum, 1e-12);

  // Exact gradient of J against finite differences of the enumerated J.
  constexpr double kObjectiveStep = 1e-5;
  double worst_exact = 0.0;
  const EnvSpec env = conflict_spec(2, 3, 0.8, 0.3);
  const JointLaw law(env);
  const ContextLayout& layout = law.layout();
  for (std::size_t k = 0; k < policies; ++k) {
    Rng rng = make_rng(seed, {2, k});
    PolicyTable policy = random_policy(layout.num_contexts(), layout.num_answers(), 1.0, rng);
    const auto exact = exact_gradient(policy, law);
    std::vector<double> numeric(exact.values.size(), 0.0);
    for (ContextId c = 0; c < layout.num_multi_contexts(); ++c) {
      for (std::size_t b = 0; b < layout.num_answers(); ++b) {
        const double saved = policy.row(c)[b];
        policy.mutable_row(c)[b] = saved + kObjectiveStep;
        const double up = exact_objective(policy, law);
        policy.mutable_row(c)[b] = saved - kObjectiveStep;
        const double down = exact_objective(policy, law);
        policy.mutable_row(c)[b] = saved;
        numeric[c * layout.num_answers() + b] = (up - down) / (2.0 * kObjectiveStep);
      }
    }
    worst_exact = std::max(worst_exact, relative_difference(exact.values, numeric));
  }
  report.expect_at_most("exact_gradient_max_relative_error", worst_exact, 1e-7);
  report.details = {{"triples", triples}, {"policies", policies}, {"step", kStep}};
  return report;
}

EstimatorAverage estimate_gradient(const PolicyTable& policy, const EnvSpec& env,
                                   Normalizer estimator, std::size_t samples, std::uint64_t seed,
                                   const EstimatorSetup& setup) {
  if (samples < 2) throw std::invalid_argument("need at least two samples");
  validate(env);
  const std::size_t dim = policy.num_contexts() * policy.num_actions();
  const std::size_t A = policy.num_actions();
  constexpr std::size_t kBlocks = 64;
  const std::size_t blocks = std::min(kBlocks, samples);
  std::vector<std::vector<double>> sums(blocks), squares(blocks);

  parallel_for(blocks, [&](std::size_t blk) {
    std::vector<double> sum(dim, 0.0), sq(dim, 0.0), one(dim, 0.0);
    const std::size_t lo = blk * samples / blocks, hi = (blk + 1) * samples / blocks;
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng = make_rng(seed, {i});
      const TaskInstance inst = sample_instance(env, rng, i);
      const RolloutGroup g = sample_group(policy, inst, setup.rollouts_per_group,
                                          setup.mono_per_source, rng, setup.format_weight);
      const AdvantageVector adv = compute_advantage(estimator, g, setup.eps);
      const ContextId c = inst.multi_context;
      std::fill(one.begin() + c * A, one.begin() + (c + 1) * A, 0.0);
      add_group_gradient(policy, g, adv.values, 0.0, one);
      for (std::size_t b = c * A; b < (c + 1) * A; ++b) {
        sum[b] += one[b];
        sq[b] += one[b] * one[b];
      }
    }
    sums[blk] = std::move(sum);
    squares[blk] = std::move(sq);
  });

  EstimatorAverage out;
  out.samples = samples;
  out.mean.assign(dim, 0.0);
  out.standard_error.assign(dim, 0.0);
  std::vector<double> sq_total(dim, 0.0);
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    for (std::size_t i = 0; i < dim; ++i) {
      out.mean[i] += sums[blk][i];
      sq_total[i] += squares[blk][i];
    }
  }
  const double n = static_cast<double>(samples);
  double se2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    out.mean[i] /= n;
    const double var = std::max(sq_total[i] / n - out.mean[i] * out.mean[i], 0.0) * n / (n - 1.0);
    out.standard_error[i] = std::sqrt(var / n);
    se2 += var / n;
  }
  out.standard_error_norm = std::sqrt(se2);
  return out;
}

VerificationReport verify_unbiasedness(const PolicyTable& policy, const EnvSpec& env,
                                       Normalizer estimator, std::size_t samples,
                                       std::uint64_t seed, const EstimatorSetup& setup) {
  const JointLaw law(env);
  const ExactGradient exact = exact_gradient(policy, law, setup.format_weight);
  const EstimatorAverage est = estimate_gradient(policy, env, estimator, samples, seed, setup);

  VerificationReport report;
  report.check = "unbiasedness/" + to_string(estimator);
  report.seed = seed;
  report.samples = samples;
  const double est_norm = l2(est.mean);
  report.details = {{"exact_norm", exact.norm()},
                    {"estimate_norm", est_norm},
                    {"standard_error_norm", est.standard_error_norm},
                    {"rollouts_per_group", setup.rollouts_per_group},
                    {"mono_per_source", setup.mono_per_source}};
  if (exact.norm() < 1e-14) {
    report.expect_at_most("estimate_norm_over_standard_error",
                          est_norm / est.standard_error_norm, 3.0);
    return report;
  }
  const double cos = cosine_similarity(est.mean, exact.values);
  const double rel = relative_l2_error(est.mean, exact.values);
  report.details["cosine"] = cos;
  report.details["relative_l2"] = rel;
  if (estimator == Normalizer::kMeanBaseline) {
    report.expect_at_least("cosine", cos, 0.999);
    report.expect_at_most("relative_l2", rel, 0.02);
  } else {
    report.expect_at_least("cosine", cos, 0.99);
  }
  return report;
}

VerificationReport verify_decomposition(const PolicyTable& policy,
                                        const std::vector<RolloutGroup>& groups, double eps) {
  VerificationReport report;
  report.check = "decomposition";
  report.samples = groups.size();
  const std::size_t dim = policy.num_contexts() * policy.num_actions();
  std::vector<double> batch_mars(dim, 0.0), batch_rebuilt(dim, 0.0);
  double group_residual = 0.0, grpo_residual = 0.0, mean_residual = 0.0, max_shift = 0.0;
  for (const auto& g : groups) {
    if (g.m() == 0) throw std::invalid_argument("decomposition needs M >= 1 in every group");
    const AdvantageVector mars = advantage_mars(g, eps);
    const AdvantageVector grpo = advantage_grpo(g, eps);
    const MarsDecomposition dec = decompose_mars(g, eps);

    std::vector<double> direct(dim, 0.0), rebuilt(dim, 0.0), centered(dim, 0.0),
        grpo_grad(dim, 0.0);
    add_group_gradient(policy, g, mars.values, 0.0, direct);
    add_group_gradient(policy, g, dec.centered, dec.shift, rebuilt);
    add_group_gradient(policy, g, dec.centered, 0.0, centered);
    add_group_gradient(policy, g, grpo.values, 0.0, grpo_grad);
    for (double& v : centered) v /= dec.std_ratio;

    group_residual = std::max(group_residual, max_abs_diff(direct, rebuilt));
    grpo_residual = std::max(grpo_residual, max_abs_diff(centered, grpo_grad));
    for (std::size_t i = 0; i < dim; ++i) {
      batch_mars[i] += direct[i];
      batch_rebuilt[i] += rebuilt[i];
    }
    double mean = 0.0;
    for (double v : mars.values) mean += v;
    mean /= static_cast<double>(mars.values.size());
    mean_residual = std::max(mean_residual, std::abs(mean - dec.shift));
    max_shift = std::max(max_shift, std::abs(dec.shift));
  }
  report.expect_at_most("group_gradient_residual", group_residual, 1e-10);
  report.expect_at_most("batch_gradient_residual", max_abs_diff(batch_mars, batch_rebuilt), 1e-10);
  report.expect_at_most("grpo_rescale_residual", grpo_residual, 1e-10);
  report.expect_at_most("advantage_mean_residual", mean_residual, 1e-10);
  report.details = {{"groups", groups.size()}, {"max_abs_shift", max_shift}};
  return report;
}

std::vector<RolloutGroup> random_groups(const PolicyTable& policy, std::size_t count,
                                        std::size_t n, std::size_t m, double reward_lo,
                                        double reward_hi, Rng& rng) {
  std::vector<RolloutGroup> groups(count);
  for (std::size_t i = 0; i < count; ++i) {
    RolloutGroup& g = groups[i];
    g.instance_id = i;
    g.policy_version = policy.version();
    const ContextId c = uniform_index(rng, policy.num_contexts());
    const auto probs = action_probs(policy, c);
    auto reward = [&] { return reward_lo + (reward_hi - reward_lo) * uniform01(rng); };
    for (std::size_t j = 0; j < n; ++j) {
      g.multi.push_back({sample_from(probs, rng), reward(), c, policy.version()});
    }
    for (std::size_t k = 0; k < m; ++k) {
      g.mono.push_back({k, sample_from(probs, rng), reward(), c, policy.version()});
    }
  }
  return groups;
}

std::vector<RunStatistics> report_statistics(
    const std::vector<std::pair<std::string, std::vector<TrainLogRow>>>& runs) {
  std::vector<RunStatistics> out;
  for (const auto& [name, log] : runs) {
    if (log.empty()) throw std::invalid_argument("run '" + name + "' has no log rows");
    const TrainLogRow& last = log.back();
    RunStatistics s{name, last.max_multi_reward, last.mean_multi_reward, last.max_mono_reward, {}};
    for (const auto& row : log) s.delta_ig.push_back(row.delta_ig);
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_statistics_table(const std::vector<RunStatistics>& stats) {
  std::ostringstream out;
  out << "statistic";
  for (const auto& s : stats) out << ',' << s.run;
  out << "\nmax(r(o^multi))";
  for (const auto& s : stats) out << ',' << format_number(s.max_multi_reward);
  out << "\nmean(r(o^multi))";
  for (const auto& s : stats) out << ',' << format_number(s.mean_multi_reward);
  out << "\nmax(r(o^mono))";
  for (const auto& s : stats) out << ',' << format_number(s.max_mono_reward);
  out << '\n';
  return out.str();
}

}  // namespace mars
