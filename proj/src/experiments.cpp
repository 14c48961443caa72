#include "mars/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mars {

namespace {

std::vector<std::uint64_t> seeds_from_json(const nlohmann::json& j) {
  if (j.contains("seeds")) {
    if (j.contains("num_seeds")) throw std::invalid_argument("give seeds or num_seeds, not both");
    auto seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
    return seeds;
  }
  const auto count = j.value("num_seeds", std::size_t{1});
  const auto first = j.value("first_seed", std::uint64_t{0});
  if (count == 0) throw std::invalid_argument("num_seeds must be >= 1");
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = first + i;
  return seeds;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& keys) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!keys.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

RunOutcome run_one(const TrainConfig& cfg) {
  const TrainResult r = train(cfg);
  return {r.final_multi_accuracy, r.final_union_accuracy};
}

}  // namespace

double sign_test_p_value(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  const std::size_t k = std::min(wins, losses);
  // P(X <= k), X ~ Binomial(n, 1/2), summed in log space.
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double log_term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) -
                            std::lgamma(n - i + 1.0) - static_cast<double>(n) * std::log(2.0);
    tail += std::exp(log_term);
  }
  return std::min(1.0, 2.0 * tail);
}

TrainConfig config_for_seed(TrainConfig base, std::uint64_t seed) {
  base.seed = seed;
  base.env.seed = seed;
  return base;
}

ComparisonConfig comparison_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"base", "normalizers", "seeds", "num_seeds", "first_seed"});
  ComparisonConfig c;
  c.base = train_config_from_json(j.at("base"));
  for (const auto& n : j.at("normalizers")) c.normalizers.push_back(normalizer_from_string(n));
  if (c.normalizers.size() < 2) throw std::invalid_argument("compare needs >= 2 normalizers");
  c.seeds = seeds_from_json(j);
  return c;
}

PairedSummary summarize_pairs(const std::string& label, const std::vector<double>& reference,
                              const std::vector<double>& candidate,
                              const std::vector<double>& reference_union,
                              const std::vector<double>& candidate_union) {
  PairedSummary s;
  s.label = label;
  std::vector<double> diffs, union_diffs;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = candidate[i] - reference[i];
    diffs.push_back(d);
    if (d > 0.0) ++s.wins;
    else if (d < 0.0) ++s.losses;
    else ++s.ties;
  }
  for (std::size_t i = 0; i < reference_union.size(); ++i) {
    union_diffs.push_back(candidate_union[i] - reference_union[i]);
  }
  s.mean_difference = mean_of(diffs);
  s.mean_union_difference = mean_of(union_diffs);
  s.reference_mean = mean_of(reference);
  s.candidate_mean = mean_of(candidate);
  if (reference.size() >= 2) s.p_value = sign_test_p_value(s.wins, s.losses);
  return s;
}

ComparisonResult run_comparison(const ComparisonConfig& config) {
  if (config.normalizers.size() < 2) throw std::invalid_argument("compare needs >= 2 normalizers");
  if (config.seeds.empty()) throw std::invalid_argument("compare needs at least one seed");
  ComparisonResult res;
  res.seeds = config.seeds;
  std::set<std::string> used;
  for (Normalizer n : config.normalizers) {
    std::string label = to_string(n);
    for (int k = 2; used.contains(label); ++k) label = to_string(n) + "_" + std::to_string(k);
    used.insert(label);
    res.labels.push_back(label);
  }
  for (std::uint64_t seed : config.seeds) {
    std::vector<RunOutcome> row;
    for (Normalizer n : config.normalizers) {
      TrainConfig cfg = config_for_seed(config.base, seed);
      cfg.normalizer = n;
      row.push_back(run_one(cfg));
    }
    res.outcomes.push_back(std::move(row));
  }
  auto column = [&](std::size_t k, bool multi) {
    std::vector<double> v;
    for (const auto& row : res.outcomes) {
      v.push_back(multi ? row[k].multi_accuracy : row[k].union_accuracy);
    }
    return v;
  };
  for (std::size_t k = 1; k < config.normalizers.size(); ++k) {
    res.summaries.push_back(summarize_pairs(res.labels[k] + " - " + res.labels[0], column(0, true),
                                            column(k, true), column(0, false), column(k, false)));
  }
  return res;
}

void write_comparison_csv(std::ostream& out, const ComparisonResult& r) {
  out << "seed";
  for (const auto& l : r.labels) out << ',' << l << "_multi," << l << "_union";
  for (std::size_t k = 1; k < r.labels.size(); ++k) {
    out << ",diff_multi_" << r.labels[k] << ",diff_union_" << r.labels[k];
  }
  out << '\n';
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    const auto& row = r.outcomes[i];
    out << r.seeds[i];
    for (const auto& o : row) {
      out << ',' << format_number(o.multi_accuracy) << ',' << format_number(o.union_accuracy);
    }
    for (std::size_t k = 1; k < row.size(); ++k) {
      out << ',' << format_number(row[k].multi_accuracy - row[0].multi_accuracy) << ','
          << format_number(row[k].union_accuracy - row[0].union_accuracy);
    }
    out << '\n';
  }
}

void write_comparison_summary_csv(std::ostream& out, const ComparisonResult& r) {
  out << "comparison,seeds,reference_mean_multi,candidate_mean_multi,mean_diff_multi,"
         "mean_diff_union,wins,losses,ties,sign_test_p\n";
  for (const auto& s : r.summaries) {
    out << s.label << ',' << r.seeds.size() << ',' << format_number(s.reference_mean) << ','
        << format_number(s.candidate_mean) << ',' << format_number(s.mean_difference) << ','
        << format_number(s.mean_union_difference) << ',' << s.wins << ',' << s.losses << ','
        << s.ties << ',' << (s.p_value ? format_number(*s.p_value) : std::string("NA")) << '\n';
  }
}

AblationConfig ablation_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"base", "m_values", "seeds", "num_seeds", "first_seed"});
  AblationConfig c;
  c.base = train_config_from_json(j.at("base"));
  c.m_values = j.at("m_values").get<std::vector<std::size_t>>();
  if (c.m_values.empty()) throw std::invalid_argument("m_values must not be empty");
  c.seeds = seeds_from_json(j);
  return c;
}

double AblationResult::mean_multi(std::size_t m_index) const {
  std::vector<double> v;
  for (const auto& o : outcomes.at(m_index)) v.push_back(o.multi_accuracy);
  return mean_of(v);
}

AblationResult run_ablation(const AblationConfig& config) {
  const std::size_t S = config.base.env.num_sources;
  AblationResult res;
  res.seeds = config.seeds;
  res.num_sources = S;
  for (std::size_t m : config.m_values) {
    if (m % S != 0) {
      throw std::invalid_argument("M=" + std::to_string(m) + " is not a multiple of the " +
                                  std::to_string(S) + " sources");
    }
    if (std::find(res.m_values.begin(), res.m_values.end(), m) != res.m_values.end()) {
      res.warnings.push_back("duplicate M=" + std::to_string(m) + " ignored");
      continue;
    }
    res.m_values.push_back(m);
  }
  for (std::size_t m : res.m_values) {
    std::vector<RunOutcome> row;
    for (std::uint64_t seed : config.seeds) {
      TrainConfig cfg = config_for_seed(config.base, seed);
      cfg.mono_per_source = m / S;
      row.push_back(run_one(cfg));
    }
    res.outcomes.push_back(std::move(row));
  }
  return res;
}

void write_ablation_csv(std::ostream& out, const AblationResult& r) {
  out << "m,mono_per_source,seed,multi_accuracy,union_accuracy\n";
  for (std::size_t i = 0; i < r.m_values.size(); ++i) {
    for (std::size_t k = 0; k < r.seeds.size(); ++k) {
      const auto& o = r.outcomes[i][k];
      out << r.m_values[i] << ',' << r.m_values[i] / r.num_sources << ','
          << r.seeds[k] << ',' << format_number(o.multi_accuracy) << ','
          << format_number(o.union_accuracy) << '\n';
    }
  }
}

}  // namespace mars
