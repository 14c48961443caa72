#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mars/trainer.hpp"

namespace mars {

/// Two-sided exact sign test on the non-tied pairs. Returns 1 when every
/// pair is tied.
double sign_test_p_value(std::size_t wins, std::size_t losses);

/// For seed s, each run uses config.seed = s and config.env.seed = s, so the
/// runs being compared share data and rollout streams.
TrainConfig config_for_seed(TrainConfig base, std::uint64_t seed);

struct ComparisonConfig {
  TrainConfig base;
  std::vector<Normalizer> normalizers;
  std::vector<std::uint64_t> seeds;
};

/// Keys: base (train config), normalizers (>= 2 names), and either seeds
/// (list) or num_seeds with optional first_seed.
ComparisonConfig comparison_config_from_json(const nlohmann::json& j);

struct RunOutcome {
  double multi_accuracy = 0.0;
  double union_accuracy = 0.0;
};

struct PairedSummary {
  std::string label;             // "<candidate> - <reference>"
  double mean_difference = 0.0;  // multi accuracy
  double mean_union_difference = 0.0;
  std::size_t wins = 0, losses = 0, ties = 0;
  std::optional<double> p_value;  // absent with fewer than two seeds
  double reference_mean = 0.0;
  double candidate_mean = 0.0;
};

struct ComparisonResult {
  std::vector<std::string> labels;  // one per normalizer, made unique
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<RunOutcome>> outcomes;  // [seed][normalizer]
  std::vector<PairedSummary> summaries;           // normalizer i vs normalizer 0, i >= 1
};

ComparisonResult run_comparison(const ComparisonConfig& config);
PairedSummary summarize_pairs(const std::string& label, const std::vector<double>& reference,
                              const std::vector<double>& candidate,
                              const std::vector<double>& reference_union = {},
                              const std::vector<double>& candidate_union = {});
void write_comparison_csv(std::ostream& out, const ComparisonResult& result);
void write_comparison_summary_csv(std::ostream& out, const ComparisonResult& result);

struct AblationConfig {
  TrainConfig base;
  std::vector<std::size_t> m_values;  // total mono rollouts per group
  std::vector<std::uint64_t> seeds;
};

/// Keys: base, m_values, and seeds / num_seeds / first_seed as above.
AblationConfig ablation_config_from_json(const nlohmann::json& j);

struct AblationResult {
  std::vector<std::size_t> m_values;  // deduplicated, in first-seen order
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<RunOutcome>> outcomes;  // [m index][seed]
  std::vector<std::string> warnings;
  std::size_t num_sources = 1;

  double mean_multi(std::size_t m_index) const;
};

/// Every M must be a multiple of the source count. M = 0 trains plain GRPO.
AblationResult run_ablation(const AblationConfig& config);
void write_ablation_csv(std::ostream& out, const AblationResult& result);

}  // namespace mars
