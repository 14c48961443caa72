#include "mars/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace mars {

PolicyTable::PolicyTable(std::size_t num_contexts, std::size_t num_actions)
    : num_contexts_(num_contexts), num_actions_(num_actions),
      theta_(num_contexts * num_actions, 0.0) {
  if (num_contexts == 0 || num_actions == 0) {
    throw std::invalid_argument("policy needs at least one context and one action");
  }
}

std::span<const double> PolicyTable::row(ContextId context) const {
  if (context >= num_contexts_) {
    throw std::out_of_range("context " + std::to_string(context) + " out of range");
  }
  return std::span<const double>(theta_).subspan(context * num_actions_, num_actions_);
}

std::span<double> PolicyTable::mutable_row(ContextId context) {
  if (context >= num_contexts_) {
    throw std::out_of_range("context " + std::to_string(context) + " out of range");
  }
  return std::span<double>(theta_).subspan(context * num_actions_, num_actions_);
}

GradientAccumulator::GradientAccumulator(std::size_t num_contexts, std::size_t num_actions)
    : num_contexts_(num_contexts), num_actions_(num_actions),
      values_(num_contexts * num_actions, 0.0) {}

void GradientAccumulator::add(const ScoreGradient& g, double weight) {
  add_row(g.context, g.row, weight);
}

void GradientAccumulator::add_row(ContextId context, std::span<const double> row, double weight) {
  add_dense_row(context, row, weight);
  ++terms_;
}

void GradientAccumulator::add_dense_row(ContextId context, std::span<const double> row,
                                        double weight) {
  if (context >= num_contexts_ || row.size() != num_actions_) {
    throw std::invalid_argument("gradient row does not match accumulator shape");
  }
  double* dst = values_.data() + context * num_actions_;
  for (std::size_t a = 0; a < num_actions_; ++a) dst[a] += weight * row[a];
}

void GradientAccumulator::scale(double factor) {
  for (double& v : values_) v *= factor;
}

GradientAccumulator& GradientAccumulator::operator+=(const GradientAccumulator& other) {
  if (other.num_contexts_ != num_contexts_ || other.num_actions_ != num_actions_) {
    throw std::invalid_argument("gradient shapes differ");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  terms_ += other.terms_;
  return *this;
}

std::span<const double> GradientAccumulator::row(ContextId context) const {
  return std::span<const double>(values_).subspan(context * num_actions_, num_actions_);
}

double GradientAccumulator::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

bool GradientAccumulator::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> softmax(std::span<const double> logits) {
  const double shift = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - shift);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> action_probs(const PolicyTable& policy, ContextId context) {
  return softmax(policy.row(context));
}

ActionId sample_from(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cdf = 0.0;
  for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
    cdf += probs[a];
    if (u < cdf) return a;
  }
  return probs.size() - 1;
}

ActionId sample_action(const PolicyTable& policy, ContextId context, Rng& rng) {
  return sample_from(action_probs(policy, context), rng);
}

ActionId greedy_action(const PolicyTable& policy, ContextId context) {
  const auto r = policy.row(context);
  return static_cast<ActionId>(std::max_element(r.begin(), r.end()) - r.begin());
}

ScoreGradient log_prob_grad(std::span<const double> probs, ContextId context, ActionId action) {
  if (action >= probs.size()) throw std::out_of_range("action out of range");
  ScoreGradient g{context, std::vector<double>(probs.size())};
  for (std::size_t b = 0; b < probs.size(); ++b) g.row[b] = -probs[b];
  g.row[action] += 1.0;
  return g;
}

ScoreGradient log_prob_grad(const PolicyTable& policy, ContextId context, ActionId action) {
  return log_prob_grad(action_probs(policy, context), context, action);
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double entropy(const PolicyTable& policy, ContextId context) {
  return entropy(action_probs(policy, context));
}

PolicyTable apply_gradient(const PolicyTable& policy, const GradientAccumulator& grad,
                           double learning_rate) {
  if (grad.num_contexts() != policy.num_contexts() ||
      grad.num_actions() != policy.num_actions()) {
    throw std::invalid_argument("gradient shape does not match policy");
  }
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("learning rate must be finite and non-negative");
  }
  if (!grad.all_finite()) throw std::domain_error("non-finite gradient; update aborted");
  PolicyTable next = policy;
  const auto g = grad.values();
  for (ContextId c = 0; c < policy.num_contexts(); ++c) {
    auto dst = next.mutable_row(c);
    for (std::size_t a = 0; a < dst.size(); ++a) {
      dst[a] += learning_rate * g[c * policy.num_actions() + a];
      if (!std::isfinite(dst[a])) throw std::domain_error("update produced non-finite logits");
    }
  }
  next.set_version(policy.version() + 1);
  return next;
}

nlohmann::json policy_to_json(const PolicyTable& policy) {
  nlohmann::json rows = nlohmann::json::array();
  for (ContextId c = 0; c < policy.num_contexts(); ++c) {
    const auto r = policy.row(c);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"num_contexts", policy.num_contexts()},
          {"num_actions", policy.num_actions()},
          {"version", policy.version()},
          {"theta", std::move(rows)}};
}

PolicyTable policy_from_json(const nlohmann::json& j) {
  const auto contexts = j.at("num_contexts").get<std::size_t>();
  const auto actions = j.at("num_actions").get<std::size_t>();
  PolicyTable p(contexts, actions);
  const auto& rows = j.at("theta");
  if (!rows.is_array() || rows.size() != contexts) {
    throw std::invalid_argument("theta must have num_contexts rows");
  }
  for (ContextId c = 0; c < contexts; ++c) {
    const auto values = rows[c].get<std::vector<double>>();
    if (values.size() != actions) throw std::invalid_argument("theta row has wrong length");
    auto dst = p.mutable_row(c);
    for (std::size_t a = 0; a < actions; ++a) {
      if (!std::isfinite(values[a])) throw std::invalid_argument("theta holds non-finite value");
      dst[a] = values[a];
    }
  }
  p.set_version(j.value("version", std::uint64_t{0}));
  return p;
}

void save_policy(const PolicyTable& policy, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << policy_to_json(policy).dump(1) << '\n';
}

PolicyTable load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return policy_from_json(nlohmann::json::parse(in));
}

}  // namespace mars
