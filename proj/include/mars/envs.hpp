#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mars/policy.hpp"
#include "mars/rng.hpp"

namespace mars {

enum class Regime { kConflict, kPromotion, kDegraded };

/// How an unreliable source picks its symbol.
///  kUniform:     uniform over all symbols (may hit the answer by chance).
///  kWrongAnswer: uniform over the wrong answers only (active distraction).
enum class NoiseModel { kUniform, kWrongAnswer };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);
std::string to_string(NoiseModel m);
NoiseModel noise_model_from_string(const std::string& s);

struct SourceSpec {
  double reliability = 0.0;
  NoiseModel noise = NoiseModel::kUniform;
};

/// Observation symbols share the answer alphabet, so every source emits one
/// of `num_answers` symbols.
struct EnvSpec {
  Regime regime = Regime::kConflict;
  Regime base_regime = Regime::kConflict;  // consulted only when degraded
  std::size_t num_sources = 2;
  std::size_t num_answers = 4;
  std::vector<SourceSpec> sources;  // conflict-style regimes; one per source
  std::vector<double> corruption;   // degraded only; empty means all zero
  std::size_t dataset_size = 1024;
  std::uint64_t seed = 0;

  /// Regime whose answer/observation law is used before corruption.
  Regime law_regime() const { return regime == Regime::kDegraded ? base_regime : regime; }
  double corruption_of(std::size_t source) const {
    return corruption.empty() ? 0.0 : corruption.at(source);
  }
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const EnvSpec& spec);

/// Source 0 is dominant with `p_dominant` (uniform noise); the rest are
/// distractors with `p_other` that point at a wrong answer when unreliable.
EnvSpec conflict_spec(std::size_t num_sources = 2, std::size_t num_answers = 4,
                      double p_dominant = 0.9, double p_other = 0.3);
/// Answer = (sum of source symbols) mod num_answers; XOR when binary.
EnvSpec promotion_spec(std::size_t num_sources = 2, std::size_t num_answers = 2);
EnvSpec degraded_spec(EnvSpec base, std::vector<double> corruption);

/// Context numbering: multi-source contexts first (the full symbol tuple in
/// base num_answers, source 0 least significant), then one block of
/// num_answers mono contexts per source.
class ContextLayout {
 public:
  ContextLayout(std::size_t num_sources, std::size_t num_answers);
  explicit ContextLayout(const EnvSpec& spec) : ContextLayout(spec.num_sources, spec.num_answers) {}

  std::size_t num_sources() const { return num_sources_; }
  std::size_t num_answers() const { return num_answers_; }
  std::size_t num_multi_contexts() const { return num_multi_; }
  std::size_t num_contexts() const { return num_multi_ + num_sources_ * num_answers_; }

  ContextId multi_context(const std::vector<std::size_t>& symbols) const;
  ContextId mono_context(std::size_t source, std::size_t symbol) const;
  std::vector<std::size_t> decode_multi(ContextId context) const;
  bool is_multi(ContextId context) const { return context < num_multi_; }

 private:
  std::size_t num_sources_;
  std::size_t num_answers_;
  std::size_t num_multi_;
};

struct TaskInstance {
  std::size_t id = 0;
  std::size_t answer = 0;
  std::vector<std::size_t> symbols;
  Regime regime = Regime::kConflict;
  ContextId multi_context = 0;
  std::vector<ContextId> mono_contexts;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

/// Draws one instance following spec.law_regime() and, when degraded, the
/// per-source corruption.
TaskInstance sample_instance(const EnvSpec& spec, Rng& rng, std::size_t id);

std::vector<TaskInstance> generate_conflict(const EnvSpec& spec, Rng& rng);
std::vector<TaskInstance> generate_promotion(const EnvSpec& spec, Rng& rng);
std::vector<TaskInstance> generate_degraded(const EnvSpec& spec, Rng& rng);
/// Dispatches on spec.regime; `count` overrides dataset_size when given.
std::vector<TaskInstance> generate(const EnvSpec& spec, Rng& rng,
                                   std::optional<std::size_t> count = std::nullopt);

/// Task reward (1 if correct) plus the constant format bonus every synthetic
/// rollout earns. Throws std::out_of_range for an invalid action.
double env_reward(const TaskInstance& instance, ActionId action, double format_weight = 1.0);

/// Exact joint law P(answer, observed symbol tuple) of a generator.
class JointLaw {
 public:
  explicit JointLaw(const EnvSpec& spec);

  const ContextLayout& layout() const { return layout_; }
  /// P(answer = a, multi context = c).
  double joint(ContextId multi_context, std::size_t answer) const;
  /// P(answer = a, source s shows symbol x).
  double mono_joint(std::size_t source, std::size_t symbol, std::size_t answer) const;
  double context_prob(ContextId multi_context) const;

  /// Accuracy of the Bayes-optimal multi-source policy.
  double best_multi_accuracy() const;
  /// Accuracy of the Bayes-optimal policy that sees only `source`.
  double best_mono_accuracy(std::size_t source) const;
  /// Expected task accuracy of greedy(policy) on multi contexts.
  double greedy_multi_accuracy(const PolicyTable& policy) const;
  double greedy_mono_accuracy(const PolicyTable& policy, std::size_t source) const;
  /// Mutual information (nats) between one source's symbol and the answer.
  double source_answer_information(std::size_t source) const;

 private:
  ContextLayout layout_;
  std::vector<double> table_;  // [multi_context * A + answer]
};

/// Cap on num_answers^(2*num_sources) work for exact enumeration.
inline constexpr std::size_t kMaxEnumerableContexts = 10000;

nlohmann::json instance_to_json(const TaskInstance& inst);
nlohmann::json env_spec_to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const nlohmann::json& j);

}  // namespace mars
