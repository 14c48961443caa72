#include "mars/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <set>
#include <unordered_set>

#include "mars/parallel.hpp"

namespace mars {

namespace {

// Sub-stream tags under the env seed and the run seed.
enum Stream : std::uint64_t { kTrainData = 1, kEvalData = 2, kBatch = 3, kRollout = 4 };

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid train config: " + what);
}

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t double_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof u);
  return u;
}

std::uint64_t hash_groups(const std::vector<RolloutGroup>& groups) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& g : groups) {
    h = fnv1a(h, g.instance_id);
    for (const auto& r : g.multi) h = fnv1a(fnv1a(h, r.action), double_bits(r.reward));
    for (const auto& r : g.mono) h = fnv1a(fnv1a(h, r.action), double_bits(r.reward));
  }
  return h;
}

TrainLogRow summarize(std::size_t iteration, const PolicyTable& policy,
                      const std::vector<RolloutGroup>& groups) {
  TrainLogRow row;
  row.iteration = iteration;
  double multi_sum = 0.0, mono_sum = 0.0;
  std::size_t multi_n = 0, mono_n = 0;
  row.max_multi_reward = -std::numeric_limits<double>::infinity();
  double mono_max = -std::numeric_limits<double>::infinity();
  std::set<ContextId> visited;
  for (const auto& g : groups) {
    for (const auto& r : g.multi) {
      multi_sum += r.reward;
      row.max_multi_reward = std::max(row.max_multi_reward, r.reward);
      ++multi_n;
      visited.insert(r.context);
    }
    for (const auto& r : g.mono) {
      mono_sum += r.reward;
      mono_max = std::max(mono_max, r.reward);
      ++mono_n;
    }
  }
  row.mean_multi_reward = multi_sum / static_cast<double>(multi_n);
  if (mono_n > 0) {
    row.mean_mono_reward = mono_sum / static_cast<double>(mono_n);
    row.max_mono_reward = mono_max;
    row.delta_ig = row.mean_multi_reward - row.mean_mono_reward;
  } else {
    row.mean_mono_reward = row.max_mono_reward = row.delta_ig = kNaN;
  }
  double h = 0.0;
  for (ContextId c : visited) h += entropy(policy, c);
  row.mean_entropy = h / static_cast<double>(visited.size());
  return row;
}

// Gradient of KL(pi_c || ref_c) with respect to the logits of row c.
std::vector<double> kl_row_gradient(std::span<const double> p, std::span<const double> ref) {
  double kl = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] > 0.0) kl += p[a] * (std::log(p[a]) - std::log(ref[a]));
  }
  std::vector<double> g(p.size());
  for (std::size_t a = 0; a < p.size(); ++a) {
    g[a] = p[a] > 0.0 ? p[a] * (std::log(p[a]) - std::log(ref[a]) - kl) : 0.0;
  }
  return g;
}

void add_kl_penalty(GradientAccumulator& grad, const PolicyTable& policy,
                    const PolicyTable& reference, const std::vector<RolloutGroup>& groups,
                    double kl_coeff, std::size_t batch_instances) {
  if (kl_coeff == 0.0) return;
  for (const auto& g : groups) {
    const ContextId c = g.multi.front().context;
    const auto row = kl_row_gradient(action_probs(policy, c), action_probs(reference, c));
    grad.add_dense_row(c, row, -kl_coeff / static_cast<double>(batch_instances));
  }
}

// Single pass of clipped-ratio updates over consecutive minibatches of groups.
PolicyTable ppo_update(const TrainConfig& cfg, const PolicyTable& snapshot,
                       const PolicyTable& reference, const std::vector<RolloutGroup>& groups,
                       const std::vector<AdvantageVector>& advantages, GradientAccumulator& total) {
  PolicyTable current = snapshot;
  const std::size_t batches = std::min(cfg.ppo_minibatches, groups.size());
  const double weight = 1.0 / static_cast<double>(cfg.batch_instances * cfg.rollouts_per_group);
  for (std::size_t k = 0; k < batches; ++k) {
    const std::size_t lo = k * groups.size() / batches;
    const std::size_t hi = (k + 1) * groups.size() / batches;
    GradientAccumulator grad(current);
    std::vector<RolloutGroup> slice;
    for (std::size_t g = lo; g < hi; ++g) {
      slice.push_back(groups[g]);
      if (advantages[g].values.empty()) continue;
      const ContextId c = groups[g].multi.front().context;
      const auto old_p = action_probs(snapshot, c);
      const auto new_p = action_probs(current, c);
      for (std::size_t j = 0; j < groups[g].n(); ++j) {
        const ActionId a = groups[g].multi[j].action;
        const double adv = advantages[g].values[j];
        const double ratio = new_p[a] / old_p[a];
        const bool clipped = (adv >= 0.0 && ratio > 1.0 + cfg.ppo_clip) ||
                             (adv < 0.0 && ratio < 1.0 - cfg.ppo_clip);
        grad.add(log_prob_grad(new_p, c, a), clipped ? 0.0 : weight * ratio * adv);
      }
    }
    add_kl_penalty(grad, current, reference, slice, cfg.kl_coeff, cfg.batch_instances);
    if (!grad.all_finite()) throw NumericError("non-finite PPO gradient");
    current = apply_gradient(current, grad, cfg.learning_rate);
    total += grad;
  }
  current.set_version(snapshot.version() + 1);
  return current;
}

}  // namespace

void validate(const TrainConfig& c) {
  validate(c.env);
  require(c.rollouts_per_group >= 2, "rollouts_per_group (N) must be >= 2");
  require(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0,
          "learning_rate must be finite and >= 0");
  require(c.iterations >= 1, "iterations must be >= 1");
  require(c.batch_instances >= 1, "batch_instances must be >= 1");
  require(c.eps > 0.0, "eps must be > 0");
  require(c.kl_coeff >= 0.0, "kl_coeff must be >= 0");
  require(c.log_every >= 1, "log_every must be >= 1");
  require(c.format_weight >= 0.0, "format_weight must be >= 0");
  require(c.ppo_clip >= 0.0, "ppo_clip must be >= 0");
  require(c.ppo_minibatches >= 1, "ppo_minibatches must be >= 1");
  require(c.eval_instances >= 1, "eval_instances must be >= 1");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"env", env_spec_to_json(c.env)},
          {"advantage", to_string(c.normalizer)},
          {"rollouts_per_group", c.rollouts_per_group},
          {"mono_per_source", c.mono_per_source},
          {"learning_rate", c.learning_rate},
          {"iterations", c.iterations},
          {"batch_instances", c.batch_instances},
          {"eps", c.eps},
          {"seed", c.seed},
          {"kl_coeff", c.kl_coeff},
          {"log_every", c.log_every},
          {"format_weight", c.format_weight},
          {"filter_degenerate_groups", c.filter_degenerate_groups},
          {"ppo_clip", c.ppo_clip},
          {"ppo_minibatches", c.ppo_minibatches},
          {"eval_instances", c.eval_instances}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {
      "env",        "advantage", "normalizer", "rollouts_per_group", "mono_per_source",
      "learning_rate", "iterations", "batch_instances",  "eps",
      "seed",       "kl_coeff",   "log_every",          "format_weight",
      "filter_degenerate_groups", "ppo_clip", "ppo_minibatches", "eval_instances"};
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  TrainConfig c;
  if (j.contains("env")) c.env = env_spec_from_json(j.at("env"));
  // "normalizer" is accepted as an alias of "advantage".
  if (j.contains("advantage") && j.contains("normalizer")) {
    throw std::invalid_argument("give advantage or normalizer, not both");
  }
  if (j.contains("advantage")) c.normalizer = normalizer_from_string(j.at("advantage"));
  if (j.contains("normalizer")) c.normalizer = normalizer_from_string(j.at("normalizer"));
  c.rollouts_per_group = j.value("rollouts_per_group", c.rollouts_per_group);
  c.mono_per_source = j.value("mono_per_source", c.mono_per_source);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_instances = j.value("batch_instances", c.batch_instances);
  c.eps = j.value("eps", c.eps);
  c.seed = j.value("seed", c.seed);
  c.kl_coeff = j.value("kl_coeff", c.kl_coeff);
  c.log_every = j.value("log_every", c.log_every);
  c.format_weight = j.value("format_weight", c.format_weight);
  c.filter_degenerate_groups = j.value("filter_degenerate_groups", c.filter_degenerate_groups);
  c.ppo_clip = j.value("ppo_clip", c.ppo_clip);
  c.ppo_minibatches = j.value("ppo_minibatches", c.ppo_minibatches);
  c.eval_instances = j.value("eval_instances", c.eval_instances);
  validate(c);
  return c;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_log_csv(std::ostream& out, const std::vector<TrainLogRow>& rows) {
  out << kLogCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_number(r.mean_multi_reward) << ','
        << format_number(r.max_multi_reward) << ',' << format_number(r.mean_mono_reward) << ','
        << format_number(r.max_mono_reward) << ',' << format_number(r.delta_ig) << ','
        << format_number(r.mean_entropy) << ',' << format_number(r.grad_norm) << '\n';
  }
}

std::vector<TaskInstance> training_set(const TrainConfig& config) {
  Rng rng = make_rng(config.env.seed, {kTrainData});
  return generate(config.env, rng);
}

std::vector<TaskInstance> evaluation_set(const TrainConfig& config) {
  Rng rng = make_rng(config.env.seed, {kEvalData});
  return generate(config.env, rng, config.eval_instances);
}

GradientAccumulator batch_gradient(const PolicyTable& policy,
                                   const std::vector<RolloutGroup>& groups,
                                   const std::vector<AdvantageVector>& advantages,
                                   std::size_t batch_instances) {
  GradientAccumulator grad(policy);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& adv = advantages[g].values;
    if (adv.empty()) continue;  // filtered group
    const auto& group = groups[g];
    const ContextId c = group.multi.front().context;
    const auto probs = action_probs(policy, c);
    const double weight = 1.0 / static_cast<double>(batch_instances * group.n());
    for (std::size_t j = 0; j < group.n(); ++j) {
      if (!std::isfinite(adv[j])) throw NumericError("non-finite advantage");
      grad.add(log_prob_grad(probs, c, group.multi[j].action), weight * adv[j]);
    }
  }
  return grad;
}

TrainResult train(const TrainConfig& config, const TrainHooks& hooks) {
  validate(config);
  const auto data = training_set(config);
  const auto eval = evaluation_set(config);
  const ContextLayout layout(config.env);

  TrainResult result;
  result.initial_policy = PolicyTable(layout.num_contexts(), config.env.num_answers);
  PolicyTable policy = result.initial_policy;
  const std::size_t B = config.batch_instances;

  for (std::size_t t = 0; t < config.iterations; ++t) {
    Rng batch_rng = make_rng(config.seed, {kBatch, t});
    std::vector<std::size_t> picks(B);
    for (auto& i : picks) i = uniform_index(batch_rng, data.size());

    std::vector<RolloutGroup> groups(B);
    parallel_for(B, [&](std::size_t b) {
      Rng rng = make_rng(config.seed, {kRollout, t, b});
      groups[b] = sample_group(policy, data[picks[b]], config.rollouts_per_group,
                               config.mono_per_source, rng, config.format_weight);
    });
    result.rollout_hashes.push_back(hash_groups(groups));
    if (hooks.on_groups) hooks.on_groups(t, groups);

    std::vector<AdvantageVector> advantages(B);
    for (std::size_t b = 0; b < B; ++b) {
      if (config.filter_degenerate_groups && is_degenerate_group(groups[b])) continue;
      advantages[b] = compute_advantage(config.normalizer, groups[b], config.eps);
    }

    TrainLogRow row = summarize(t, policy, groups);
    GradientAccumulator grad(policy);
    if (config.ppo_clip > 0.0) {
      policy = ppo_update(config, policy, result.initial_policy, groups, advantages, grad);
    } else {
      grad = batch_gradient(policy, groups, advantages, B);
      add_kl_penalty(grad, policy, result.initial_policy, groups, config.kl_coeff, B);
      if (!grad.all_finite()) {
        throw NumericError("non-finite gradient at iteration " + std::to_string(t));
      }
      policy = apply_gradient(policy, grad, config.learning_rate);
    }
    result.score_terms.push_back(grad.terms());
    row.grad_norm = grad.norm();
    if (t % config.log_every == 0 || t + 1 == config.iterations) result.log.push_back(row);
  }

  result.final_multi_accuracy = evaluate(policy, eval, EvalMode::kMulti);
  result.final_union_accuracy = evaluate(policy, eval, EvalMode::kUnion);
  result.final_best_mono_accuracy = best_mono_accuracy(policy, eval);
  result.policy = std::move(policy);
  return result;
}

double evaluate(const PolicyTable& policy, const std::vector<TaskInstance>& instances,
                EvalMode mode) {
  if (instances.empty()) throw std::invalid_argument("evaluation needs at least one instance");
  std::size_t correct = 0;
  for (const auto& inst : instances) {
    if (mode == EvalMode::kMulti) {
      correct += greedy_action(policy, inst.multi_context) == inst.answer;
    } else {
      correct += std::any_of(inst.mono_contexts.begin(), inst.mono_contexts.end(),
                             [&](ContextId c) { return greedy_action(policy, c) == inst.answer; });
    }
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

double evaluate_mono(const PolicyTable& policy, const std::vector<TaskInstance>& instances,
                     std::size_t source) {
  if (instances.empty()) throw std::invalid_argument("evaluation needs at least one instance");
  std::size_t correct = 0;
  for (const auto& inst : instances) {
    correct += greedy_action(policy, inst.mono_contexts.at(source)) == inst.answer;
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

double best_mono_accuracy(const PolicyTable& policy, const std::vector<TaskInstance>& instances) {
  if (instances.empty()) throw std::invalid_argument("evaluation needs at least one instance");
  double best = 0.0;
  for (std::size_t s = 0; s < instances.front().mono_contexts.size(); ++s) {
    best = std::max(best, evaluate_mono(policy, instances, s));
  }
  return best;
}

}  // namespace mars
