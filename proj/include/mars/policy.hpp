#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "mars/rng.hpp"

namespace mars {

using ContextId = std::size_t;
using ActionId = std::size_t;

/// Tabular softmax policy: pi(a|c) = softmax(theta[c, .])[a].
///
/// Every update bumps `version`, which rollout groups use to check that all
/// of their records came from one snapshot.
class PolicyTable {
 public:
  PolicyTable() = default;
  /// Zero logits, i.e. the uniform policy.
  PolicyTable(std::size_t num_contexts, std::size_t num_actions);

  std::size_t num_contexts() const { return num_contexts_; }
  std::size_t num_actions() const { return num_actions_; }
  std::uint64_t version() const { return version_; }

  std::span<const double> row(ContextId context) const;
  std::span<double> mutable_row(ContextId context);
  std::span<const double> theta() const { return theta_; }

  void set_version(std::uint64_t v) { version_ = v; }

  friend bool operator==(const PolicyTable&, const PolicyTable&) = default;

 private:
  std::size_t num_contexts_ = 0;
  std::size_t num_actions_ = 0;
  std::uint64_t version_ = 0;
  std::vector<double> theta_;
};

/// Gradient of log pi(action|context) with respect to theta. Only the row of
/// `context` is nonzero, so only that row is stored.
struct ScoreGradient {
  ContextId context = 0;
  std::vector<double> row;
};

/// Dense gradient buffer with the policy's shape. Counts how many weighted
/// score terms were folded in.
class GradientAccumulator {
 public:
  GradientAccumulator(std::size_t num_contexts, std::size_t num_actions);
  explicit GradientAccumulator(const PolicyTable& like)
      : GradientAccumulator(like.num_contexts(), like.num_actions()) {}

  void add(const ScoreGradient& g, double weight);
  void add_row(ContextId context, std::span<const double> row, double weight);
  /// Adds without counting a score term (e.g. regularizer gradients).
  void add_dense_row(ContextId context, std::span<const double> row, double weight);
  void scale(double factor);
  GradientAccumulator& operator+=(const GradientAccumulator& other);

  std::size_t num_contexts() const { return num_contexts_; }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t terms() const { return terms_; }
  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }
  std::span<const double> row(ContextId context) const;
  double norm() const;
  bool all_finite() const;

 private:
  std::size_t num_contexts_;
  std::size_t num_actions_;
  std::size_t terms_ = 0;
  std::vector<double> values_;
};

std::vector<double> softmax(std::span<const double> logits);

/// Throws std::out_of_range for an invalid context.
std::vector<double> action_probs(const PolicyTable& policy, ContextId context);

ActionId sample_from(std::span<const double> probs, Rng& rng);
ActionId sample_action(const PolicyTable& policy, ContextId context, Rng& rng);

/// Lowest-index argmax of the logits row.
ActionId greedy_action(const PolicyTable& policy, ContextId context);

/// d/dtheta[c,b] log pi(a|c) = 1{b=a} - pi(b|c).
ScoreGradient log_prob_grad(const PolicyTable& policy, ContextId context, ActionId action);
/// Same, from precomputed probabilities of the context row.
ScoreGradient log_prob_grad(std::span<const double> probs, ContextId context, ActionId action);

/// Shannon entropy in nats.
double entropy(const PolicyTable& policy, ContextId context);
double entropy(std::span<const double> probs);

/// theta + learning_rate * grad. Throws std::domain_error if the gradient
/// or the result holds a non-finite value; the input policy is untouched.
PolicyTable apply_gradient(const PolicyTable& policy, const GradientAccumulator& grad,
                           double learning_rate);

nlohmann::json policy_to_json(const PolicyTable& policy);
PolicyTable policy_from_json(const nlohmann::json& j);
void save_policy(const PolicyTable& policy, const std::filesystem::path& path);
PolicyTable load_policy(const std::filesystem::path& path);

}  // namespace mars
