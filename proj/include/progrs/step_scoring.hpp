#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "progrs/core_model.hpp"
#include "progrs/policy.hpp"
#include "progrs/random.hpp"
#include "progrs/synthetic_env.hpp"

namespace progrs::scoring {

enum class ScorerKind { OracleDP, Miscalibrated, Noisy, Constant, FromFile };

constexpr std::string_view to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::OracleDP: return "oracle";
    case ScorerKind::Miscalibrated: return "miscalibrated";
    case ScorerKind::Noisy: return "noisy";
    case ScorerKind::Constant: return "constant";
    case ScorerKind::FromFile: return "file";
  }
  return "oracle";
}

inline std::optional<ScorerKind> parse_scorer_kind(std::string_view s) {
  for (auto k : {ScorerKind::OracleDP, ScorerKind::Miscalibrated, ScorerKind::Noisy, ScorerKind::Constant,
                 ScorerKind::FromFile}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

/// Behavioural stand-in for a frozen step-level reward model.
///
/// The score of step t must be a function of (prompt, s_1..s_t) only.
/// score_prefix() is the prefix-only evaluation; score_all() is the
/// single-pass evaluation over a whole trajectory and must agree with it
/// step for step. verify_prefix_causality() checks both properties.
class StepScorer {
 public:
  virtual ~StepScorer() = default;

  virtual std::string name() const = 0;

  /// Score of the last step of `prefix`.
  virtual QuantileTriple score_prefix(std::string_view prompt_id, std::span<const std::string> prefix) const = 0;

  virtual std::vector<QuantileTriple> score_all(std::string_view prompt_id,
                                                std::span<const std::string> steps) const {
    std::vector<QuantileTriple> out;
    out.reserve(steps.size());
    for (std::size_t t = 1; t <= steps.size(); ++t) out.push_back(score_prefix(prompt_id, steps.first(t)));
    return out;
  }
};

namespace detail {

inline QuantileTriple banded(double median, double band) {
  return {std::clamp(median - band, 0.0, 1.0), median, std::clamp(median + band, 0.0, 1.0)};
}

inline bool well_formed(const QuantileTriple& q) {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  return unit(q.lo) && unit(q.median) && unit(q.hi) && q.lo <= q.median && q.median <= q.hi;
}

}  // namespace detail

/// Scores every step of `traj` with one pass of the scorer. The median
/// channel of the result is the per-step score.
inline StepScoreSeries score_trajectory(const StepScorer& scorer, std::string_view prompt_id,
                                        const Trajectory& traj) {
  std::vector<QuantileTriple> triples;
  try {
    triples = scorer.score_all(prompt_id, traj.steps());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ScorerEvaluationFailure) throw;
    fail(ErrorCode::ScorerEvaluationFailure, scorer.name() + ": " + e.what());
  } catch (const std::exception& e) {
    fail(ErrorCode::ScorerEvaluationFailure, scorer.name() + ": " + e.what());
  }
  if (triples.size() != traj.length()) {
    fail(ErrorCode::ScorerEvaluationFailure, scorer.name() + " returned " + std::to_string(triples.size()) +
                                                 " scores for " + std::to_string(traj.length()) + " steps");
  }
  for (std::size_t t = 0; t < triples.size(); ++t) {
    if (!detail::well_formed(triples[t])) {
      fail(ErrorCode::ScorerEvaluationFailure,
           scorer.name() + " produced an invalid quantile triple at step " + std::to_string(t));
    }
  }
  return StepScoreSeries::from_triples(triples);
}

inline StepScoreSeries score_trajectory(const StepScorer& scorer, const Trajectory& traj) {
  return score_trajectory(scorer, traj.prompt_id(), traj);
}

// ---------------------------------------------------------------------------
// Exact success probability on the chain task

/// Probability that completing `prefix` under `policy` ends in a correct
/// answer, by backward induction over (accumulator, steps taken).
inline double oracle_success_probability(const env::ChainEnv& env, const env::ChainPrompt& prompt,
                                         std::span<const ActionIndex> prefix, const SoftmaxPolicy& policy,
                                         std::size_t state_cap = 1'000'000) {
  int acc = 0;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    if (static_cast<int>(t) >= prompt.horizon) return 0.0;
    if (prefix[t] == env.stop_action()) return acc == prompt.target ? 1.0 : 0.0;
    acc += env.increments().at(prefix[t]);
  }
  const int start = static_cast<int>(prefix.size());
  if (start >= prompt.horizon || acc > prompt.target) return 0.0;

  const std::size_t width = static_cast<std::size_t>(prompt.target) + 1;
  const std::size_t states = width * (static_cast<std::size_t>(prompt.horizon) + 1);
  if (states > state_cap) {
    fail(ErrorCode::HorizonTooLarge, std::to_string(states) + " DP states exceed cap " + std::to_string(state_cap));
  }
  // value[a] = success probability from accumulator a with `step` actions taken.
  std::vector<double> value(width, 0.0);  // step == horizon: no answer given
  for (int step = prompt.horizon - 1; step >= start; --step) {
    std::vector<double> prev(width, 0.0);
    for (int a = 0; a <= prompt.target; ++a) {
      const auto p = policy.probabilities(env.state_index(prompt, a, step));
      double v = a == prompt.target ? p[env.stop_action()] : 0.0;
      for (std::size_t i = 0; i < env.increments().size(); ++i) {
        const int next = a + env.increments()[i];
        if (next <= prompt.target) v += p[i] * value[static_cast<std::size_t>(next)];
      }
      prev[static_cast<std::size_t>(a)] = v;
    }
    value.swap(prev);
  }
  return value[static_cast<std::size_t>(acc)];
}

/// Calibrated scorer: the exact success probability of the prefix under a
/// fixed completion policy (uniform by default). Quantile bands collapse to
/// the point value.
class OracleScorer final : public StepScorer {
 public:
  explicit OracleScorer(env::ChainEnv env, std::optional<SoftmaxPolicy> policy = std::nullopt,
                        std::size_t state_cap = 1'000'000)
      : env_(std::move(env)), policy_(policy ? std::move(*policy) : env_.make_policy()), state_cap_(state_cap) {}

  std::string name() const override { return "oracle"; }

  QuantileTriple score_prefix(std::string_view prompt_id, std::span<const std::string> prefix) const override {
    const auto prompt = require_prompt(prompt_id, prefix.size());
    const auto actions = parse(prefix);
    const double p = oracle_success_probability(env_, prompt, actions, policy_, state_cap_);
    return {p, p, p};
  }

  /// One forward walk over a value table built once per prompt.
  std::vector<QuantileTriple> score_all(std::string_view prompt_id,
                                        std::span<const std::string> steps) const override {
    const auto prompt = require_prompt(prompt_id, steps.size());
    const auto actions = parse(steps);
    const auto table = value_table(prompt);
    const std::size_t width = static_cast<std::size_t>(prompt.target) + 1;
    std::vector<QuantileTriple> out;
    out.reserve(steps.size());
    int acc = 0;
    std::optional<double> settled;
    for (std::size_t t = 0; t < actions.size(); ++t) {
      if (!settled) {
        if (static_cast<int>(t) >= prompt.horizon) {
          settled = 0.0;
        } else if (actions[t] == env_.stop_action()) {
          settled = acc == prompt.target ? 1.0 : 0.0;
        } else {
          acc += env_.increments()[actions[t]];
        }
      }
      double p;
      if (settled) {
        p = *settled;
      } else {
        const std::size_t taken = t + 1;
        p = (acc > prompt.target || static_cast<int>(taken) >= prompt.horizon)
                ? 0.0
                : table[taken * width + static_cast<std::size_t>(acc)];
      }
      out.push_back({p, p, p});
    }
    return out;
  }

  const env::ChainEnv& environment() const noexcept { return env_; }

 private:
  env::ChainPrompt require_prompt(std::string_view id, std::size_t step) const {
    auto p = env_.parse_prompt_id(id);
    if (!p) {
      fail(ErrorCode::ScorerEvaluationFailure,
           "oracle cannot interpret prompt '" + std::string(id) + "' (step " + std::to_string(step) + ")");
    }
    return *p;
  }

  std::vector<ActionIndex> parse(std::span<const std::string> steps) const {
    std::vector<ActionIndex> out;
    out.reserve(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
      auto a = env_.parse_action(steps[t]);
      if (!a) fail(ErrorCode::ScorerEvaluationFailure, "unknown action '" + steps[t] + "' at step " + std::to_string(t));
      out.push_back(*a);
    }
    return out;
  }

  // table[step * width + acc], forward-indexed by actions taken.
  std::vector<double> value_table(const env::ChainPrompt& prompt) const {
    const std::size_t width = static_cast<std::size_t>(prompt.target) + 1;
    const std::size_t rows = static_cast<std::size_t>(prompt.horizon) + 1;
    if (width * rows > state_cap_) {
      fail(ErrorCode::HorizonTooLarge, std::to_string(width * rows) + " DP states exceed cap");
    }
    std::vector<double> table(width * rows, 0.0);
    for (int step = prompt.horizon - 1; step >= 0; --step) {
      for (int a = 0; a <= prompt.target; ++a) {
        const auto p = policy_.probabilities(env_.state_index(prompt, a, step));
        double v = a == prompt.target ? p[env_.stop_action()] : 0.0;
        for (std::size_t i = 0; i < env_.increments().size(); ++i) {
          const int next = a + env_.increments()[i];
          if (next <= prompt.target) v += p[i] * table[(static_cast<std::size_t>(step) + 1) * width + next];
        }
        table[static_cast<std::size_t>(step) * width + static_cast<std::size_t>(a)] = v;
      }
    }
    return table;
  }

  env::ChainEnv env_;
  SoftmaxPolicy policy_;
  std::size_t state_cap_;
};

struct MiscalibrationParams {
  double trap_floor = 0.8;
  double damping = 0.7;
  double band = 0.05;
  std::size_t min_run = env::kTrapMinRun;
};

/// Prefix whose non-STOP actions are one increment repeated at least
/// `min_run` times.
inline bool matches_trap_pattern(std::span<const std::string> prefix, std::size_t min_run = env::kTrapMinRun) {
  const std::string* first = nullptr;
  std::size_t run = 0;
  for (const auto& s : prefix) {
    if (s == env::kStopLabel) continue;
    if (!first) {
      first = &s;
    } else if (s != *first) {
      return false;
    }
    ++run;
  }
  return first != nullptr && run >= min_run;
}

/// Rates repetitive prefixes at least trap_floor regardless of where they
/// lead; every other prefix gets the base median damped by `damping`.
class MiscalibratedScorer final : public StepScorer {
 public:
  MiscalibratedScorer(std::shared_ptr<const StepScorer> base, MiscalibrationParams params = {})
      : base_(std::move(base)), params_(params) {}

  std::string name() const override { return "miscalibrated"; }

  QuantileTriple score_prefix(std::string_view prompt_id, std::span<const std::string> prefix) const override {
    return distort(base_->score_prefix(prompt_id, prefix).median, matches_trap_pattern(prefix, params_.min_run));
  }

  std::vector<QuantileTriple> score_all(std::string_view prompt_id,
                                        std::span<const std::string> steps) const override {
    auto base = base_->score_all(prompt_id, steps);
    const std::string* first = nullptr;
    bool uniform = true;
    std::size_t run = 0;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      if (steps[t] != env::kStopLabel) {
        if (!first) {
          first = &steps[t];
        } else if (steps[t] != *first) {
          uniform = false;
        }
        ++run;
      }
      base[t] = distort(base[t].median, uniform && run >= params_.min_run);
    }
    return base;
  }

  const MiscalibrationParams& params() const noexcept { return params_; }

 private:
  QuantileTriple distort(double base_median, bool trap) const {
    const double m = trap ? std::max(params_.trap_floor, base_median) : params_.damping * base_median;
    return detail::banded(std::clamp(m, 0.0, 1.0), params_.band);
  }

  std::shared_ptr<const StepScorer> base_;
  MiscalibrationParams params_;
};

/// Adds seeded uniform noise in [-delta, delta] to the base median. The noise
/// is a hash of (seed, prompt, prefix), so it is reproducible and
/// prefix-causal. Bands are widened to keep lo <= median <= hi.
class NoisyScorer final : public StepScorer {
 public:
  NoisyScorer(std::shared_ptr<const StepScorer> base, double delta, std::uint64_t seed)
      : base_(std::move(base)), delta_(delta), seed_(seed) {
    if (!(delta_ >= 0.0)) fail(ErrorCode::InvalidConfig, "noise delta must be >= 0");
  }

  std::string name() const override { return "noisy(" + base_->name() + ")"; }

  QuantileTriple score_prefix(std::string_view prompt_id, std::span<const std::string> prefix) const override {
    std::uint64_t h = start_hash(prompt_id);
    for (const auto& s : prefix) h = extend_hash(h, s);
    return perturb(base_->score_prefix(prompt_id, prefix), h);
  }

  std::vector<QuantileTriple> score_all(std::string_view prompt_id,
                                        std::span<const std::string> steps) const override {
    auto base = base_->score_all(prompt_id, steps);
    std::uint64_t h = start_hash(prompt_id);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      h = extend_hash(h, steps[t]);
      base[t] = perturb(base[t], h);
    }
    return base;
  }

  double delta() const noexcept { return delta_; }

 private:
  std::uint64_t start_hash(std::string_view prompt_id) const { return rng::fnv1a(prompt_id, rng::splitmix64(seed_)); }
  static std::uint64_t extend_hash(std::uint64_t h, std::string_view step) {
    h = rng::fnv1a(step, h);
    return rng::fnv1a("\x1f", h);  // unit separator between steps
  }

  QuantileTriple perturb(QuantileTriple q, std::uint64_t h) const {
    const double noise = (2.0 * rng::hash_to_unit(h) - 1.0) * delta_;
    const double m = std::clamp(q.median + noise, 0.0, 1.0);
    return {std::min(q.lo, m), m, std::max(q.hi, m)};
  }

  std::shared_ptr<const StepScorer> base_;
  double delta_;
  std::uint64_t seed_;
};

class ConstantScorer final : public StepScorer {
 public:
  explicit ConstantScorer(QuantileTriple value) : value_(value) {
    if (!detail::well_formed(value_)) fail(ErrorCode::InvalidConfig, "constant scorer triple is not ordered in [0,1]");
  }

  std::string name() const override { return "constant"; }

  QuantileTriple score_prefix(std::string_view, std::span<const std::string>) const override { return value_; }

 private:
  QuantileTriple value_;
};

// ---------------------------------------------------------------------------
// Externally produced scores

/// One line of a score file. `prefix`, when present, pins the entry to an
/// exact step prefix; otherwise the entry applies to any trajectory of the
/// prompt at that (zero-based) step index.
struct ScoreEntry {
  std::string prompt_id;
  std::size_t step_index = 0;
  std::optional<std::vector<std::string>> prefix;
  QuantileTriple value;
};

class FromFileScorer final : public StepScorer {
 public:
  explicit FromFileScorer(const std::vector<ScoreEntry>& entries) {
    for (const auto& e : entries) {
      if (!detail::well_formed(e.value)) {
        fail(ErrorCode::ParseError, "score entry for '" + e.prompt_id + "' step " + std::to_string(e.step_index) +
                                        " is not an ordered triple in [0,1]");
      }
      if (e.prefix) {
        if (e.prefix->size() != e.step_index + 1) {
          fail(ErrorCode::ParseError, "score entry prefix length disagrees with step_index");
        }
        by_prefix_[{e.prompt_id, *e.prefix}] = e.value;
      } else {
        by_index_[{e.prompt_id, e.step_index}] = e.value;
      }
    }
  }

  static FromFileScorer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open score file '" + path + "'");
    std::vector<ScoreEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        ScoreEntry e;
        e.prompt_id = j.at("prompt_id").get<std::string>();
        e.step_index = j.at("step_index").get<std::size_t>();
        if (j.contains("prefix")) e.prefix = j.at("prefix").get<std::vector<std::string>>();
        e.value.median = j.at("median").get<double>();
        e.value.lo = j.value("lo", e.value.median);
        e.value.hi = j.value("hi", e.value.median);
        entries.push_back(std::move(e));
      } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
    return FromFileScorer(entries);
  }

  std::string name() const override { return "file"; }

  QuantileTriple score_prefix(std::string_view prompt_id, std::span<const std::string> prefix) const override {
    const std::string id(prompt_id);
    std::vector<std::string> key(prefix.begin(), prefix.end());
    if (auto it = by_prefix_.find({id, key}); it != by_prefix_.end()) return it->second;
    const std::size_t step = prefix.empty() ? 0 : prefix.size() - 1;
    if (auto it = by_index_.find({id, step}); it != by_index_.end()) return it->second;
    fail(ErrorCode::ScorerEvaluationFailure,
         "no stored score for prompt '" + id + "' at step " + std::to_string(step));
  }

  std::size_t size() const noexcept { return by_prefix_.size() + by_index_.size(); }

 private:
  std::map<std::pair<std::string, std::vector<std::string>>, QuantileTriple> by_prefix_;
  std::map<std::pair<std::string, std::size_t>, QuantileTriple> by_index_;
};

// ---------------------------------------------------------------------------
// Causality verification

struct DifferenceSummary {
  std::size_t comparisons = 0;
  double mean_abs = 0.0;
  double std_abs = 0.0;
  double max_abs = 0.0;
};

struct CausalityReport {
  DifferenceSummary prefix_vs_full;      // Test 1
  DifferenceSummary suffix_perturbation;  // Test 2
  bool violation = false;
};

struct CausalityCase {
  std::string prompt_id;
  std::vector<std::string> steps;
};

namespace detail {

class DiffAccumulator {
 public:
  void add(double d) {
    d = std::abs(d);
    ++n_;
    sum_ += d;
    sum_sq_ += d * d;
    max_ = std::max(max_, d);
  }
  DifferenceSummary summary() const {
    DifferenceSummary s;
    s.comparisons = n_;
    if (n_ == 0) return s;
    s.mean_abs = sum_ / static_cast<double>(n_);
    s.std_abs = std::sqrt(std::max(0.0, sum_sq_ / static_cast<double>(n_) - s.mean_abs * s.mean_abs));
    s.max_abs = max_;
    return s;
  }

 private:
  std::size_t n_ = 0;
  double sum_ = 0.0, sum_sq_ = 0.0, max_ = 0.0;
};

}  // namespace detail

/// Test 1: prefix-only scores equal the single-pass scores at every step.
/// Test 2: the single-pass score at step t is unchanged when s_{t+1..T} is
/// rewritten with random tokens from `vocabulary`, `n_perturbations` times.
/// Differences are taken on the median channel. Throws
/// NonDeterministicScorer if two identical evaluations disagree.
inline CausalityReport verify_prefix_causality(const StepScorer& scorer, std::span<const CausalityCase> cases,
                                               std::size_t n_perturbations,
                                               std::span<const std::string> vocabulary, std::uint64_t seed,
                                               double tolerance = 0.0) {
  if (cases.empty()) fail(ErrorCode::EmptyBatch, "verify_prefix_causality needs at least one trajectory");
  if (vocabulary.empty()) fail(ErrorCode::InvalidConfig, "perturbation vocabulary must be nonempty");
  rng::Engine eng(rng::splitmix64(seed));
  detail::DiffAccumulator test1, test2;
  for (const auto& c : cases) {
    const auto full = scorer.score_all(c.prompt_id, c.steps);
    if (scorer.score_all(c.prompt_id, c.steps) != full) {
      fail(ErrorCode::NonDeterministicScorer, scorer.name() + " gave different scores for identical input");
    }
    if (full.size() != c.steps.size()) {
      fail(ErrorCode::ScorerEvaluationFailure, scorer.name() + " returned the wrong number of scores");
    }
    const std::span<const std::string> steps(c.steps);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const auto prefix = steps.first(t + 1);
      const auto q = scorer.score_prefix(c.prompt_id, prefix);
      if (scorer.score_prefix(c.prompt_id, prefix) != q) {
        fail(ErrorCode::NonDeterministicScorer, scorer.name() + " gave different scores for identical input");
      }
      test1.add(q.median - full[t].median);
    }
    for (std::size_t t = 0; t + 1 < steps.size(); ++t) {
      for (std::size_t k = 0; k < n_perturbations; ++k) {
        std::vector<std::string> perturbed(steps.begin(), steps.end());
        for (std::size_t u = t + 1; u < perturbed.size(); ++u) {
          perturbed[u] = vocabulary[rng::uniform_index(eng, vocabulary.size())];
        }
        const auto scored = scorer.score_all(c.prompt_id, perturbed);
        test2.add(scored.at(t).median - full[t].median);
      }
    }
  }
  CausalityReport report{test1.summary(), test2.summary(), false};
  report.violation = report.prefix_vs_full.max_abs > tolerance || report.suffix_perturbation.max_abs > tolerance;
  return report;
}

}  // namespace progrs::scoring
