#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "progrs/core_model.hpp"
#include "progrs/policy.hpp"

namespace progrs::grpo {

/// Clip range [1 - lo, 1 + hi] on the sequence ratio.
struct ClipBounds {
  double lo = 0.2;
  double hi = 0.28;

  void validate() const {
    if (!(lo > 0.0 && std::isfinite(lo)) || !(hi > 0.0 && std::isfinite(hi))) {
      fail(ErrorCode::InvalidConfig, "clip widths must be positive");
    }
  }
  double clip(double r) const { return std::clamp(r, 1.0 - lo, 1.0 + hi); }
};

inline constexpr double kLogRatioClamp = 20.0;

inline double sequence_ratio(double logprob_policy, double logprob_ref) {
  return std::exp(std::clamp(logprob_policy - logprob_ref, -kLogRatioClamp, kLogRatioClamp));
}

inline double sequence_ratio(const Trajectory& traj) {
  return sequence_ratio(traj.logprob_policy(), traj.logprob_ref());
}

struct RatioAdvantage {
  double ratio = 1.0;
  double advantage = 0.0;
};

/// True when min(r*A, clip(r)*A) picks the unclipped product (ties included).
inline bool unclipped_branch(double ratio, double advantage, const ClipBounds& bounds) {
  return ratio * advantage <= bounds.clip(ratio) * advantage;
}

inline double clipped_surrogate_loss(std::span<const RatioAdvantage> batch, const ClipBounds& bounds) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "surrogate loss over an empty batch");
  double total = 0.0;
  for (const auto& b : batch) total += std::min(b.ratio * b.advantage, bounds.clip(b.ratio) * b.advantage);
  return -total / static_cast<double>(batch.size());
}

/// One trajectory as the optimizer sees it: the visited (state, action)
/// pairs, the reference log-probability recorded at rollout time, and the
/// shaped advantage.
struct PolicySample {
  std::vector<StateAction> path;
  double logprob_ref = 0.0;
  double advantage = 0.0;
};

inline std::vector<RatioAdvantage> ratios(const SoftmaxPolicy& policy, std::span<const PolicySample> samples) {
  std::vector<RatioAdvantage> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({sequence_ratio(policy.log_prob(s.path), s.logprob_ref), s.advantage});
  return out;
}

inline double surrogate_loss(const SoftmaxPolicy& policy, std::span<const PolicySample> samples,
                             const ClipBounds& bounds) {
  const auto ra = ratios(policy, samples);
  return clipped_surrogate_loss(ra, bounds);
}

/// Re-records each sample's reference log-probability against `reference`.
inline std::vector<PolicySample> with_reference(const SoftmaxPolicy& reference, std::vector<PolicySample> samples) {
  for (auto& s : samples) s.logprob_ref = reference.log_prob(s.path);
  return samples;
}

/// Accumulates d log pi(path) / d logits, scaled by `weight`, into grad.
inline void add_log_prob_gradient(const SoftmaxPolicy& policy, std::span<const StateAction> path, double weight,
                                  std::span<double> grad) {
  const std::size_t na = policy.num_actions();
  for (const auto& sa : path) {
    const auto p = policy.probabilities(sa.state);
    double* row = grad.data() + sa.state * na;
    for (std::size_t a = 0; a < na; ++a) row[a] -= weight * p[a];
    row[sa.action] += weight;
  }
}

/// Exact gradient of the clipped surrogate with respect to every logit.
/// The min/clip selectors are treated as piecewise constant (unclipped
/// branch at ties); a sample whose log-ratio hits the +/-20 clamp also
/// contributes nothing.
inline std::vector<double> loss_gradient(const SoftmaxPolicy& policy, std::span<const PolicySample> samples,
                                         const ClipBounds& bounds) {
  if (samples.empty()) fail(ErrorCode::EmptyBatch, "gradient over an empty batch");
  std::vector<double> grad(policy.logits().size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const double log_ratio = policy.log_prob(s.path) - s.logprob_ref;
    if (std::abs(log_ratio) > kLogRatioClamp) continue;
    const double r = std::exp(log_ratio);
    if (!unclipped_branch(r, s.advantage, bounds)) continue;
    add_log_prob_gradient(policy, s.path, -inv_b * r * s.advantage, grad);
  }
  return grad;
}

inline std::vector<double> loss_gradient(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference,
                                         std::vector<PolicySample> samples, const ClipBounds& bounds) {
  const auto rescored = with_reference(reference, std::move(samples));
  return loss_gradient(policy, std::span<const PolicySample>(rescored), bounds);
}

/// Plain gradient descent step on the logits.
inline SoftmaxPolicy policy_update(SoftmaxPolicy policy, std::span<const double> gradient, double learning_rate) {
  if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidConfig, "learning rate must be positive");
  auto logits = policy.logits();
  if (gradient.size() != logits.size()) fail(ErrorCode::LengthMismatch, "gradient shape differs from policy");
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] -= learning_rate * gradient[i];
  return policy;
}

struct Diagnostics {
  double advantage_mean = 0.0;
  double advantage_std = 0.0;
  double mean_token_entropy = 0.0;
};

inline Diagnostics diagnostics(const SoftmaxPolicy& policy, std::span<const PolicySample> samples) {
  if (samples.empty()) fail(ErrorCode::EmptyBatch, "diagnostics over an empty batch");
  Diagnostics d;
  const double n = static_cast<double>(samples.size());
  for (const auto& s : samples) d.advantage_mean += s.advantage;
  d.advantage_mean /= n;
  double ss = 0.0;
  for (const auto& s : samples) ss += (s.advantage - d.advantage_mean) * (s.advantage - d.advantage_mean);
  d.advantage_std = std::sqrt(ss / n);
  double h = 0.0;
  std::size_t visits = 0;
  for (const auto& s : samples) {
    for (const auto& sa : s.path) {
      h += policy.entropy(sa.state);
      ++visits;
    }
  }
  d.mean_token_entropy = visits ? h / static_cast<double>(visits) : 0.0;
  return d;
}

}  // namespace progrs::grpo
