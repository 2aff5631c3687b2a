#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "progrs/error.hpp"

namespace progrs {

/// One scorer evaluation: the 0.1 / 0.5 / 0.9 quantiles of the success estimate.
struct QuantileTriple {
  double lo = 0.0;
  double median = 0.0;
  double hi = 0.0;

  bool operator==(const QuantileTriple&) const = default;
};

namespace detail {

inline bool in_unit_interval(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace detail

/// Per-step scores of one trajectory. The median channel is the step score;
/// the lo/hi bands are carried through for auditing only.
class StepScoreSeries {
 public:
  StepScoreSeries() = default;

  explicit StepScoreSeries(std::vector<double> median,
                           std::optional<std::vector<double>> lo = std::nullopt,
                           std::optional<std::vector<double>> hi = std::nullopt)
      : median_(std::move(median)), lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.has_value() != hi_.has_value()) {
      fail(ErrorCode::InvalidScore, "quantile bands lo and hi must be given together");
    }
    for (std::size_t t = 0; t < median_.size(); ++t) {
      if (!detail::in_unit_interval(median_[t])) {
        fail(ErrorCode::InvalidScore, "median score at step " + std::to_string(t) + " outside [0,1]");
      }
    }
    if (lo_) {
      if (lo_->size() != median_.size() || hi_->size() != median_.size()) {
        fail(ErrorCode::ScoreLengthMismatch, "quantile bands differ in length from the median channel");
      }
      for (std::size_t t = 0; t < median_.size(); ++t) {
        const double l = (*lo_)[t];
        const double h = (*hi_)[t];
        if (!detail::in_unit_interval(l) || !detail::in_unit_interval(h)) {
          fail(ErrorCode::InvalidScore, "quantile band at step " + std::to_string(t) + " outside [0,1]");
        }
        if (l > median_[t] || median_[t] > h) {
          fail(ErrorCode::InvalidScore, "quantiles not ordered at step " + std::to_string(t));
        }
      }
    }
  }

  static StepScoreSeries from_triples(const std::vector<QuantileTriple>& triples) {
    std::vector<double> lo, med, hi;
    lo.reserve(triples.size());
    med.reserve(triples.size());
    hi.reserve(triples.size());
    for (const auto& q : triples) {
      lo.push_back(q.lo);
      med.push_back(q.median);
      hi.push_back(q.hi);
    }
    return StepScoreSeries(std::move(med), std::move(lo), std::move(hi));
  }

  std::size_t size() const noexcept { return median_.size(); }
  const std::vector<double>& median() const noexcept { return median_; }
  const std::optional<std::vector<double>>& lo() const noexcept { return lo_; }
  const std::optional<std::vector<double>>& hi() const noexcept { return hi_; }

  bool operator==(const StepScoreSeries&) const = default;

 private:
  std::vector<double> median_;
  std::optional<std::vector<double>> lo_;
  std::optional<std::vector<double>> hi_;
};

/// Unvalidated trajectory record, as read from disk or assembled by a caller.
/// The outcome is kept as a real here so that non-binary inputs can be
/// reported rather than silently truncated.
struct TrajectoryDraft {
  std::string prompt_id;
  std::vector<std::string> steps;
  double outcome = 0.0;
  std::optional<StepScoreSeries> step_scores;
  double logprob_policy = 0.0;
  double logprob_ref = 0.0;
};

/// One sampled solution. Immutable; construction fails unless every
/// invariant holds.
class Trajectory {
 public:
  Trajectory(std::string prompt_id, std::vector<std::string> steps, int outcome,
             std::optional<StepScoreSeries> step_scores, double logprob_policy, double logprob_ref)
      : prompt_id_(std::move(prompt_id)),
        steps_(std::move(steps)),
        outcome_(outcome),
        step_scores_(std::move(step_scores)),
        logprob_policy_(logprob_policy),
        logprob_ref_(logprob_ref) {
    if (steps_.empty()) fail(ErrorCode::EmptyTrajectory, "trajectory for '" + prompt_id_ + "' has no steps");
    if (outcome_ != 0 && outcome_ != 1) {
      fail(ErrorCode::OutcomeNotBinary, "outcome " + std::to_string(outcome_) + " is not 0 or 1");
    }
    if (step_scores_ && step_scores_->size() != steps_.size()) {
      fail(ErrorCode::ScoreLengthMismatch, "step_scores length " + std::to_string(step_scores_->size()) +
                                               " but trajectory has " + std::to_string(steps_.size()) +
                                               " steps");
    }
    if (!std::isfinite(logprob_policy_) || !std::isfinite(logprob_ref_)) {
      fail(ErrorCode::NonFiniteLogProb, "log-probabilities must be finite");
    }
  }

  static Trajectory from_draft(const TrajectoryDraft& d) {
    if (!(d.outcome == 0.0 || d.outcome == 1.0)) {
      fail(ErrorCode::OutcomeNotBinary, "outcome " + std::to_string(d.outcome) + " is not 0 or 1");
    }
    return Trajectory(d.prompt_id, d.steps, static_cast<int>(d.outcome), d.step_scores, d.logprob_policy,
                      d.logprob_ref);
  }

  TrajectoryDraft to_draft() const {
    return {prompt_id_, steps_, static_cast<double>(outcome_), step_scores_, logprob_policy_, logprob_ref_};
  }

  Trajectory with_step_scores(StepScoreSeries scores) const {
    return Trajectory(prompt_id_, steps_, outcome_, std::move(scores), logprob_policy_, logprob_ref_);
  }

  const std::string& prompt_id() const noexcept { return prompt_id_; }
  const std::vector<std::string>& steps() const noexcept { return steps_; }
  std::size_t length() const noexcept { return steps_.size(); }
  int outcome() const noexcept { return outcome_; }
  bool correct() const noexcept { return outcome_ == 1; }
  const std::optional<StepScoreSeries>& step_scores() const noexcept { return step_scores_; }
  double logprob_policy() const noexcept { return logprob_policy_; }
  double logprob_ref() const noexcept { return logprob_ref_; }

  bool operator==(const Trajectory&) const = default;

 private:
  std::string prompt_id_;
  std::vector<std::string> steps_;
  int outcome_;
  std::optional<StepScoreSeries> step_scores_;
  double logprob_policy_;
  double logprob_ref_;
};

/// The K trajectories sampled for one prompt.
class PromptGroup {
 public:
  PromptGroup(std::string prompt_id, std::vector<Trajectory> members)
      : prompt_id_(std::move(prompt_id)), members_(std::move(members)) {
    if (members_.empty()) fail(ErrorCode::EmptyGroup, "group '" + prompt_id_ + "' has no members");
    for (const auto& m : members_) {
      if (m.prompt_id() != prompt_id_) {
        fail(ErrorCode::MixedPromptIds,
             "member prompt_id '" + m.prompt_id() + "' differs from group '" + prompt_id_ + "'");
      }
    }
  }

  const std::string& prompt_id() const noexcept { return prompt_id_; }
  const std::vector<Trajectory>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  const Trajectory& operator[](std::size_t i) const { return members_.at(i); }

  bool operator==(const PromptGroup&) const = default;

 private:
  std::string prompt_id_;
  std::vector<Trajectory> members_;
};

struct GroupDraft {
  std::string prompt_id;
  std::vector<TrajectoryDraft> members;
};

/// Validates every member and the group-level invariants. Returns the group
/// unchanged or throws Error.
inline PromptGroup validate_group(const GroupDraft& draft) {
  if (draft.members.empty()) fail(ErrorCode::EmptyGroup, "group '" + draft.prompt_id + "' has no members");
  std::vector<Trajectory> members;
  members.reserve(draft.members.size());
  for (const auto& d : draft.members) {
    if (d.prompt_id != draft.prompt_id) {
      fail(ErrorCode::MixedPromptIds,
           "member prompt_id '" + d.prompt_id + "' differs from group '" + draft.prompt_id + "'");
    }
    members.push_back(Trajectory::from_draft(d));
  }
  return PromptGroup(draft.prompt_id, std::move(members));
}

/// Shaping hyperparameters. Defaults follow the main experimental setting
/// (single scale w=3, lambda_var=2, alpha_coh=0.6); lambda_prm=0.5 is the
/// value implied by the worked case study.
struct ShapingConfig {
  std::vector<int> window_sizes{3};
  double lambda_var = 2.0;
  double alpha_coh = 0.6;
  double lambda_prm = 0.5;
  // Gate and shift in the outcome normalization.
  double epsilon_outcome = 1e-6;
  // Denominator guard in the coherence exponent.
  double epsilon_coherence = 1e-6;
  double clip_lo = 0.2;
  double clip_hi = 0.28;

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::InvalidConfig, what); };
    if (window_sizes.empty()) bad("window_sizes must be nonempty");
    for (int w : window_sizes) {
      if (w < 1) bad("window sizes must be >= 1");
    }
    if (!(std::isfinite(lambda_var) && lambda_var >= 0.0)) bad("lambda_var must be >= 0");
    if (!(alpha_coh >= 0.0 && alpha_coh <= 1.0)) bad("alpha_coh must lie in [0,1]");
    if (!(std::isfinite(lambda_prm) && lambda_prm >= 0.0)) bad("lambda_prm must be >= 0");
    if (!(std::isfinite(epsilon_outcome) && epsilon_outcome > 0.0)) bad("epsilon_outcome must be > 0");
    if (!(std::isfinite(epsilon_coherence) && epsilon_coherence > 0.0)) bad("epsilon_coherence must be > 0");
    if (!(std::isfinite(clip_lo) && clip_lo > 0.0)) bad("clip_lo must be > 0");
    if (!(std::isfinite(clip_hi) && clip_hi > 0.0)) bad("clip_hi must be > 0");
  }

  bool operator==(const ShapingConfig&) const = default;
};

/// Per-trajectory audit of how the final advantage was formed.
struct AdvantageBreakdown {
  double outcome_advantage = 0.0;
  double raw_process = 0.0;
  double centered_process = 0.0;
  double process_bonus = 0.0;
  double final = 0.0;

  bool operator==(const AdvantageBreakdown&) const = default;
};

}  // namespace progrs
