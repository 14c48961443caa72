#include "mars/envs.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mars {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid env spec: " + what);
}

// P(source shows `symbol` | answer) before corruption, conflict-style law.
double source_likelihood(const SourceSpec& src, std::size_t symbol, std::size_t answer,
                         std::size_t num_answers) {
  const double p = src.reliability;
  const double hit = symbol == answer ? p : 0.0;
  switch (src.noise) {
    case NoiseModel::kUniform:
      return hit + (1.0 - p) / static_cast<double>(num_answers);
    case NoiseModel::kWrongAnswer:
      return hit + (symbol == answer ? 0.0 : (1.0 - p) / static_cast<double>(num_answers - 1));
  }
  return 0.0;
}

double corrupt_kernel(double q, std::size_t observed, std::size_t truth, std::size_t num_answers) {
  return (observed == truth ? 1.0 - q : 0.0) + q / static_cast<double>(num_answers);
}

std::size_t draw_source_symbol(const SourceSpec& src, std::size_t answer, std::size_t num_answers,
                               Rng& rng) {
  if (uniform01(rng) < src.reliability) return answer;
  if (src.noise == NoiseModel::kWrongAnswer) {
    return (answer + 1 + uniform_index(rng, num_answers - 1)) % num_answers;
  }
  return uniform_index(rng, num_answers);
}

void draw_base(const EnvSpec& spec, Rng& rng, TaskInstance& inst) {
  const std::size_t a_count = spec.num_answers;
  inst.symbols.assign(spec.num_sources, 0);
  if (spec.law_regime() == Regime::kPromotion) {
    std::size_t sum = 0;
    for (auto& s : inst.symbols) {
      s = uniform_index(rng, a_count);
      sum += s;
    }
    inst.answer = sum % a_count;
  } else {
    inst.answer = uniform_index(rng, a_count);
    for (std::size_t s = 0; s < spec.num_sources; ++s) {
      inst.symbols[s] = draw_source_symbol(spec.sources[s], inst.answer, a_count, rng);
    }
  }
}

void corrupt(const EnvSpec& spec, Rng& rng, TaskInstance& inst) {
  for (std::size_t s = 0; s < spec.num_sources; ++s) {
    const bool hit = uniform01(rng) < spec.corruption_of(s);
    const std::size_t replacement = uniform_index(rng, spec.num_answers);
    if (hit) inst.symbols[s] = replacement;
  }
}

void assign_contexts(const EnvSpec& spec, TaskInstance& inst) {
  const ContextLayout layout(spec);
  inst.regime = spec.regime;
  inst.multi_context = layout.multi_context(inst.symbols);
  inst.mono_contexts.resize(spec.num_sources);
  for (std::size_t s = 0; s < spec.num_sources; ++s) {
    inst.mono_contexts[s] = layout.mono_context(s, inst.symbols[s]);
  }
}

std::vector<TaskInstance> generate_checked(const EnvSpec& spec, Rng& rng, std::size_t count) {
  validate(spec);
  std::vector<TaskInstance> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i].id = i;
    draw_base(spec, rng, out[i]);
  }
  if (spec.regime == Regime::kDegraded) {
    // Separate stream: the uncorrupted symbols match the base generator draw for draw.
    Rng corruption_rng(mix_seed(rng()));
    for (auto& inst : out) corrupt(spec, corruption_rng, inst);
  }
  for (auto& inst : out) assign_contexts(spec, inst);
  return out;
}

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kConflict: return "conflict";
    case Regime::kPromotion: return "promotion";
    case Regime::kDegraded: return "degraded";
  }
  return "?";
}

Regime regime_from_string(const std::string& s) {
  if (s == "conflict") return Regime::kConflict;
  if (s == "promotion") return Regime::kPromotion;
  if (s == "degraded") return Regime::kDegraded;
  throw std::invalid_argument("unknown regime '" + s + "'");
}

std::string to_string(NoiseModel m) {
  return m == NoiseModel::kUniform ? "uniform" : "wrong_answer";
}

NoiseModel noise_model_from_string(const std::string& s) {
  if (s == "uniform") return NoiseModel::kUniform;
  if (s == "wrong_answer") return NoiseModel::kWrongAnswer;
  throw std::invalid_argument("unknown noise model '" + s + "'");
}

void validate(const EnvSpec& spec) {
  require(spec.num_sources >= 2, "num_sources must be >= 2");
  require(spec.num_answers >= 2, "num_answers must be >= 2");
  require(spec.dataset_size >= 1, "dataset_size must be >= 1");
  double multi = 1.0;
  for (std::size_t s = 0; s < spec.num_sources; ++s) multi *= static_cast<double>(spec.num_answers);
  require(multi <= static_cast<double>(kMaxEnumerableContexts),
          "num_answers^num_sources exceeds " + std::to_string(kMaxEnumerableContexts));
  if (spec.regime == Regime::kDegraded) {
    require(spec.base_regime != Regime::kDegraded, "base_regime must be conflict or promotion");
    require(spec.corruption.empty() || spec.corruption.size() == spec.num_sources,
            "corruption needs one entry per source");
  } else {
    require(std::all_of(spec.corruption.begin(), spec.corruption.end(),
                        [](double q) { return q == 0.0; }),
            "corruption requires the degraded regime");
  }
  for (double q : spec.corruption) require(q >= 0.0 && q <= 1.0, "corruption must be in [0,1]");
  if (spec.law_regime() == Regime::kConflict) {
    require(spec.sources.size() == spec.num_sources, "sources needs one entry per source");
    for (const auto& src : spec.sources) {
      require(src.reliability >= 0.0 && src.reliability <= 1.0, "reliability must be in [0,1]");
    }
  }
}

EnvSpec conflict_spec(std::size_t num_sources, std::size_t num_answers, double p_dominant,
                      double p_other) {
  EnvSpec spec;
  spec.regime = Regime::kConflict;
  spec.num_sources = num_sources;
  spec.num_answers = num_answers;
  spec.sources.assign(num_sources, SourceSpec{p_other, NoiseModel::kWrongAnswer});
  if (num_sources > 0) spec.sources[0] = SourceSpec{p_dominant, NoiseModel::kUniform};
  validate(spec);
  return spec;
}

EnvSpec promotion_spec(std::size_t num_sources, std::size_t num_answers) {
  EnvSpec spec;
  spec.regime = Regime::kPromotion;
  spec.base_regime = Regime::kPromotion;
  spec.num_sources = num_sources;
  spec.num_answers = num_answers;
  validate(spec);
  return spec;
}

EnvSpec degraded_spec(EnvSpec base, std::vector<double> corruption) {
  base.base_regime = base.law_regime();
  base.regime = Regime::kDegraded;
  base.corruption = std::move(corruption);
  validate(base);
  return base;
}

ContextLayout::ContextLayout(std::size_t num_sources, std::size_t num_answers)
    : num_sources_(num_sources), num_answers_(num_answers), num_multi_(1) {
  for (std::size_t s = 0; s < num_sources; ++s) num_multi_ *= num_answers;
}

ContextId ContextLayout::multi_context(const std::vector<std::size_t>& symbols) const {
  if (symbols.size() != num_sources_) throw std::invalid_argument("symbol tuple has wrong size");
  ContextId c = 0;
  for (std::size_t s = num_sources_; s-- > 0;) {
    if (symbols[s] >= num_answers_) throw std::out_of_range("symbol out of range");
    c = c * num_answers_ + symbols[s];
  }
  return c;
}

ContextId ContextLayout::mono_context(std::size_t source, std::size_t symbol) const {
  if (source >= num_sources_ || symbol >= num_answers_) {
    throw std::out_of_range("mono context out of range");
  }
  return num_multi_ + source * num_answers_ + symbol;
}

std::vector<std::size_t> ContextLayout::decode_multi(ContextId context) const {
  if (context >= num_multi_) throw std::out_of_range("not a multi-source context");
  std::vector<std::size_t> symbols(num_sources_);
  for (std::size_t s = 0; s < num_sources_; ++s) {
    symbols[s] = context % num_answers_;
    context /= num_answers_;
  }
  return symbols;
}

TaskInstance sample_instance(const EnvSpec& spec, Rng& rng, std::size_t id) {
  TaskInstance inst;
  inst.id = id;
  draw_base(spec, rng, inst);
  if (spec.regime == Regime::kDegraded) corrupt(spec, rng, inst);
  assign_contexts(spec, inst);
  return inst;
}

std::vector<TaskInstance> generate_conflict(const EnvSpec& spec, Rng& rng) {
  if (spec.regime != Regime::kConflict) throw std::invalid_argument("spec regime is not conflict");
  return generate_checked(spec, rng, spec.dataset_size);
}

std::vector<TaskInstance> generate_promotion(const EnvSpec& spec, Rng& rng) {
  if (spec.regime != Regime::kPromotion) {
    throw std::invalid_argument("spec regime is not promotion");
  }
  return generate_checked(spec, rng, spec.dataset_size);
}

std::vector<TaskInstance> generate_degraded(const EnvSpec& spec, Rng& rng) {
  if (spec.regime != Regime::kDegraded) throw std::invalid_argument("spec regime is not degraded");
  return generate_checked(spec, rng, spec.dataset_size);
}

std::vector<TaskInstance> generate(const EnvSpec& spec, Rng& rng,
                                   std::optional<std::size_t> count) {
  return generate_checked(spec, rng, count.value_or(spec.dataset_size));
}

double env_reward(const TaskInstance& instance, ActionId action, double format_weight) {
  // Synthetic policies always emit well-formed output.
  return (action == instance.answer ? 1.0 : 0.0) + format_weight;
}

JointLaw::JointLaw(const EnvSpec& spec) : layout_(spec) {
  validate(spec);
  const std::size_t A = spec.num_answers;
  const std::size_t S = spec.num_sources;
  table_.assign(layout_.num_multi_contexts() * A, 0.0);
  for (ContextId c = 0; c < layout_.num_multi_contexts(); ++c) {
    const auto obs = layout_.decode_multi(c);
    if (spec.law_regime() == Regime::kConflict) {
      for (std::size_t a = 0; a < A; ++a) {
        double p = 1.0 / static_cast<double>(A);
        for (std::size_t s = 0; s < S; ++s) {
          const double q = spec.corruption_of(s);
          double k = 0.0;
          for (std::size_t t = 0; t < A; ++t) {
            k += corrupt_kernel(q, obs[s], t, A) * source_likelihood(spec.sources[s], t, a, A);
          }
          p *= k;
        }
        table_[c * A + a] = p;
      }
    } else {
      // sum_mod[r]: P(true symbols so far sum to r mod A, observed prefix).
      std::vector<double> sum_mod(A, 0.0);
      sum_mod[0] = 1.0;
      for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> next(A, 0.0);
        const double q = spec.corruption_of(s);
        for (std::size_t r = 0; r < A; ++r) {
          if (sum_mod[r] == 0.0) continue;
          for (std::size_t t = 0; t < A; ++t) {
            next[(r + t) % A] +=
                sum_mod[r] * corrupt_kernel(q, obs[s], t, A) / static_cast<double>(A);
          }
        }
        sum_mod = std::move(next);
      }
      for (std::size_t a = 0; a < A; ++a) table_[c * A + a] = sum_mod[a];
    }
  }
}

double JointLaw::joint(ContextId multi_context, std::size_t answer) const {
  return table_.at(multi_context * layout_.num_answers() + answer);
}

double JointLaw::context_prob(ContextId multi_context) const {
  double p = 0.0;
  for (std::size_t a = 0; a < layout_.num_answers(); ++a) p += joint(multi_context, a);
  return p;
}

double JointLaw::mono_joint(std::size_t source, std::size_t symbol, std::size_t answer) const {
  double p = 0.0;
  for (ContextId c = 0; c < layout_.num_multi_contexts(); ++c) {
    if (layout_.decode_multi(c)[source] == symbol) p += joint(c, answer);
  }
  return p;
}

double JointLaw::best_multi_accuracy() const {
  double acc = 0.0;
  for (ContextId c = 0; c < layout_.num_multi_contexts(); ++c) {
    double best = 0.0;
    for (std::size_t a = 0; a < layout_.num_answers(); ++a) best = std::max(best, joint(c, a));
    acc += best;
  }
  return acc;
}

double JointLaw::best_mono_accuracy(std::size_t source) const {
  double acc = 0.0;
  for (std::size_t x = 0; x < layout_.num_answers(); ++x) {
    double best = 0.0;
    for (std::size_t a = 0; a < layout_.num_answers(); ++a) {
      best = std::max(best, mono_joint(source, x, a));
    }
    acc += best;
  }
  return acc;
}

double JointLaw::greedy_multi_accuracy(const PolicyTable& policy) const {
  double acc = 0.0;
  for (ContextId c = 0; c < layout_.num_multi_contexts(); ++c) {
    acc += joint(c, greedy_action(policy, c));
  }
  return acc;
}

double JointLaw::greedy_mono_accuracy(const PolicyTable& policy, std::size_t source) const {
  double acc = 0.0;
  for (std::size_t x = 0; x < layout_.num_answers(); ++x) {
    acc += mono_joint(source, x, greedy_action(policy, layout_.mono_context(source, x)));
  }
  return acc;
}

double JointLaw::source_answer_information(std::size_t source) const {
  const std::size_t A = layout_.num_answers();
  std::vector<double> px(A, 0.0), pa(A, 0.0), pxa(A * A, 0.0);
  for (std::size_t x = 0; x < A; ++x) {
    for (std::size_t a = 0; a < A; ++a) {
      const double p = mono_joint(source, x, a);
      pxa[x * A + a] = p;
      px[x] += p;
      pa[a] += p;
    }
  }
  double mi = 0.0;
  for (std::size_t x = 0; x < A; ++x) {
    for (std::size_t a = 0; a < A; ++a) {
      const double p = pxa[x * A + a];
      if (p > 0.0) mi += p * std::log(p / (px[x] * pa[a]));
    }
  }
  return std::max(mi, 0.0);
}

nlohmann::json instance_to_json(const TaskInstance& inst) {
  return {{"id", inst.id},
          {"answer", inst.answer},
          {"symbols", inst.symbols},
          {"regime", to_string(inst.regime)},
          {"multi_context", inst.multi_context},
          {"mono_contexts", inst.mono_contexts}};
}

nlohmann::json env_spec_to_json(const EnvSpec& spec) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : spec.sources) {
    sources.push_back({{"reliability", s.reliability}, {"noise", to_string(s.noise)}});
  }
  nlohmann::json j = {{"regime", to_string(spec.regime)},
                      {"num_sources", spec.num_sources},
                      {"num_answers", spec.num_answers},
                      {"sources", std::move(sources)},
                      {"dataset_size", spec.dataset_size},
                      {"seed", spec.seed}};
  if (spec.regime == Regime::kDegraded) {
    j["base_regime"] = to_string(spec.base_regime);
    std::vector<double> q(spec.num_sources);
    for (std::size_t s = 0; s < spec.num_sources; ++s) q[s] = spec.corruption_of(s);
    j["corruption"] = q;
  }
  return j;
}

EnvSpec env_spec_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"regime",     "base_regime",  "num_sources",
                                              "num_answers", "sources",      "p_dominant",
                                              "p_other",     "corruption",   "dataset_size",
                                              "seed"};
  if (!j.is_object()) throw std::invalid_argument("env must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw std::invalid_argument("unknown env key '" + key + "'");
  }
  const Regime regime = regime_from_string(j.value("regime", std::string("conflict")));
  const Regime base = regime == Regime::kDegraded
                          ? regime_from_string(j.value("base_regime", std::string("conflict")))
                          : regime;
  const auto sources = j.value("num_sources", std::size_t{2});
  const auto answers =
      j.value("num_answers", base == Regime::kPromotion ? std::size_t{2} : std::size_t{4});

  EnvSpec spec;
  if (base == Regime::kConflict) {
    spec = conflict_spec(sources, answers, j.value("p_dominant", 0.9), j.value("p_other", 0.3));
    if (j.contains("sources")) {
      if (j.contains("p_dominant") || j.contains("p_other")) {
        throw std::invalid_argument("give either sources or p_dominant/p_other, not both");
      }
      spec.sources.clear();
      for (const auto& s : j.at("sources")) {
        for (const auto& [key, _] : s.items()) {
          if (key != "reliability" && key != "noise") {
            throw std::invalid_argument("unknown source key '" + key + "'");
          }
        }
        spec.sources.push_back({s.at("reliability").get<double>(),
                                noise_model_from_string(s.value("noise", std::string("uniform")))});
      }
    }
  } else {
    spec = promotion_spec(sources, answers);
  }
  spec.regime = regime;
  spec.base_regime = base;
  if (j.contains("corruption")) spec.corruption = j.at("corruption").get<std::vector<double>>();
  spec.dataset_size = j.value("dataset_size", spec.dataset_size);
  spec.seed = j.value("seed", spec.seed);
  validate(spec);
  return spec;
}

}  // namespace mars
