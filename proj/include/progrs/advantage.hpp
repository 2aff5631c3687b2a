#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "progrs/coherence.hpp"
#include "progrs/core_model.hpp"

namespace progrs {

enum class AblationMode { Full, NoCoherence, NoCentering, OutcomeOnly };

constexpr std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Full: return "full";
    case AblationMode::NoCoherence: return "no-coherence";
    case AblationMode::NoCentering: return "no-centering";
    case AblationMode::OutcomeOnly: return "outcome-only";
  }
  return "full";
}

inline std::optional<AblationMode> parse_ablation_mode(std::string_view s) {
  for (auto m : {AblationMode::Full, AblationMode::NoCoherence, AblationMode::NoCentering, AblationMode::OutcomeOnly}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

/// A shaping config plus the one switch that is not expressible as a
/// hyperparameter (whether incorrect-subset centering runs).
struct ShapingPipeline {
  ShapingConfig config;
  bool center_incorrect = true;
};

inline ShapingPipeline ablation_mode(const ShapingConfig& config, AblationMode mode) {
  ShapingPipeline p{config, true};
  switch (mode) {
    case AblationMode::Full: break;
    case AblationMode::NoCoherence: p.config.alpha_coh = 0.0; break;
    case AblationMode::NoCentering: p.center_incorrect = false; break;
    case AblationMode::OutcomeOnly: p.config.lambda_prm = 0.0; break;
  }
  return p;
}

namespace advantage {

inline std::vector<int> outcomes_of(const PromptGroup& group) {
  std::vector<int> out;
  out.reserve(group.size());
  for (const auto& m : group.members()) out.push_back(m.outcome());
  return out;
}

/// Group-normalized outcome advantage; all zeros when the population std
/// of the outcomes is below epsilon.
inline std::vector<double> outcome_advantage(std::span<const int> outcomes, double epsilon) {
  const double k = static_cast<double>(outcomes.size());
  std::vector<double> adv(outcomes.size(), 0.0);
  if (outcomes.empty()) return adv;
  double sum = 0.0;
  for (int r : outcomes) sum += r;
  const double mean = sum / k;
  double ss = 0.0;
  for (int r : outcomes) ss += (r - mean) * (r - mean);
  const double sigma = std::sqrt(ss / k);
  if (sigma < epsilon) return adv;
  for (std::size_t i = 0; i < outcomes.size(); ++i) adv[i] = (outcomes[i] - mean) / (sigma + epsilon);
  return adv;
}

inline std::vector<double> outcome_advantage(const PromptGroup& group, double epsilon) {
  const auto r = outcomes_of(group);
  return outcome_advantage(std::span<const int>(r), epsilon);
}

/// Mean raw score over the incorrect members; 0 when there are none.
inline double incorrect_mean(std::span<const int> outcomes, std::span<const double> raw) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i] == 0) {
      sum += raw[i];
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Shifts incorrect members' scores by the incorrect-subset mean; correct
/// members pass through unchanged.
inline std::vector<double> center_process_scores(std::span<const int> outcomes, std::span<const double> raw) {
  if (outcomes.size() != raw.size()) {
    fail(ErrorCode::LengthMismatch, "raw score count differs from group size");
  }
  const double mu = incorrect_mean(outcomes, raw);
  std::vector<double> out(raw.begin(), raw.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (outcomes[i] == 0) out[i] -= mu;
  }
  return out;
}

inline std::vector<double> center_process_scores(const PromptGroup& group, std::span<const double> raw) {
  const auto r = outcomes_of(group);
  return center_process_scores(std::span<const int>(r), raw);
}

struct GroupAdvantages {
  std::vector<AdvantageBreakdown> members;
  // Mean raw score over incorrect members (0 if none). Recorded even when
  // centering is disabled, as the uplift it would have removed.
  double mu_incorrect = 0.0;
  std::size_t n_incorrect = 0;
};

/// Outcome advantage plus lambda_prm times the (optionally centered)
/// coherence-aggregated process score, from precomputed raw process scores.
inline GroupAdvantages final_advantage_from_raw(std::span<const int> outcomes, std::span<const double> raw,
                                                const ShapingPipeline& pipeline) {
  if (outcomes.size() != raw.size()) fail(ErrorCode::LengthMismatch, "raw score count differs from group size");
  const auto& cfg = pipeline.config;
  const auto a_out = outcome_advantage(outcomes, cfg.epsilon_outcome);
  GroupAdvantages out;
  for (int r : outcomes) out.n_incorrect += (r == 0);
  out.mu_incorrect = incorrect_mean(outcomes, raw);
  std::vector<double> centered(raw.begin(), raw.end());
  if (pipeline.center_incorrect) centered = center_process_scores(outcomes, raw);
  out.members.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    AdvantageBreakdown b;
    b.outcome_advantage = a_out[i];
    b.raw_process = raw[i];
    b.centered_process = centered[i];
    b.process_bonus = cfg.lambda_prm * centered[i];
    b.final = b.outcome_advantage + b.process_bonus;
    out.members.push_back(b);
  }
  return out;
}

/// Full per-group pipeline. Members must carry step scores.
inline GroupAdvantages final_advantage(const PromptGroup& group, const ShapingPipeline& pipeline) {
  std::vector<double> raw;
  raw.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& scores = group[i].step_scores();
    if (!scores) {
      fail(ErrorCode::MissingStepScores, "member " + std::to_string(i) + " of group '" + group.prompt_id() +
                                             "' has no step scores and no scorer was supplied");
    }
    raw.push_back(coherence::multi_scale_score(*scores, pipeline.config));
  }
  const auto r = outcomes_of(group);
  return final_advantage_from_raw(std::span<const int>(r), std::span<const double>(raw), pipeline);
}

/// As above, scoring unscored members with `score_fn(const Trajectory&) ->
/// StepScoreSeries`.
template <typename ScoreFn>
GroupAdvantages final_advantage(const PromptGroup& group, const ShapingPipeline& pipeline, ScoreFn&& score_fn) {
  std::vector<double> raw;
  raw.reserve(group.size());
  for (const auto& m : group.members()) {
    if (m.step_scores()) {
      raw.push_back(coherence::multi_scale_score(*m.step_scores(), pipeline.config));
    } else {
      const StepScoreSeries s = score_fn(m);
      raw.push_back(coherence::multi_scale_score(s, pipeline.config));
    }
  }
  const auto r = outcomes_of(group);
  return final_advantage_from_raw(std::span<const int>(r), std::span<const double>(raw), pipeline);
}

}  // namespace advantage
}  // namespace progrs
