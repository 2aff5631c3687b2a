#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "progrs/core_model.hpp"
#include "progrs/policy.hpp"
#include "progrs/random.hpp"

namespace progrs::env {

inline constexpr std::string_view kStopLabel = "STOP";

// Shortest run of one repeated increment that counts as a fluent trap.
inline constexpr std::size_t kTrapMinRun = 2;

struct ChainPrompt {
  int target = 1;
  int horizon = 2;
  std::uint64_t seed = 0;
  std::string id;

  bool operator==(const ChainPrompt&) const = default;
};

/// Arithmetic-chain task: start at 0, add increments, answer with STOP.
/// A trajectory is correct iff the accumulator equals the target at the
/// first STOP and that STOP is among the first `horizon` actions.
class ChainEnv {
 public:
  ChainEnv() : ChainEnv(std::vector<int>{1, 2, 3}) {}

  explicit ChainEnv(std::vector<int> increments, int min_target = 1, int max_target = 12, int min_horizon = 2,
                    int max_horizon = 8)
      : increments_(std::move(increments)),
        min_target_(min_target),
        max_target_(max_target),
        min_horizon_(min_horizon),
        max_horizon_(max_horizon) {
    if (increments_.empty()) fail(ErrorCode::InvalidConfig, "increment vocabulary must be nonempty");
    for (int inc : increments_) {
      if (inc < 1) fail(ErrorCode::InvalidConfig, "increments must be positive");
    }
    if (min_target_ < 1 || max_target_ < min_target_) fail(ErrorCode::InvalidConfig, "bad target range");
    if (min_horizon_ < 1 || max_horizon_ < min_horizon_) fail(ErrorCode::InvalidConfig, "bad horizon range");
    max_increment_ = *std::max_element(increments_.begin(), increments_.end());
    for (int h = min_horizon_; h <= max_horizon_; ++h) {
      for (int t = min_target_; t <= max_target_; ++t) {
        if (reachable(t, h)) valid_pairs_.push_back({t, h});
      }
    }
    if (valid_pairs_.empty()) fail(ErrorCode::InvalidConfig, "no reachable (target, horizon) pair");
  }

  const std::vector<int>& increments() const noexcept { return increments_; }
  std::size_t num_actions() const noexcept { return increments_.size() + 1; }
  ActionIndex stop_action() const noexcept { return increments_.size(); }
  int min_target() const noexcept { return min_target_; }
  int max_target() const noexcept { return max_target_; }
  int min_horizon() const noexcept { return min_horizon_; }
  int max_horizon() const noexcept { return max_horizon_; }

  std::string action_label(ActionIndex a) const {
    if (a == stop_action()) return std::string(kStopLabel);
    return "+" + std::to_string(increments_.at(a));
  }

  std::optional<ActionIndex> parse_action(std::string_view label) const {
    if (label == kStopLabel) return stop_action();
    for (std::size_t a = 0; a < increments_.size(); ++a) {
      if (label == action_label(a)) return a;
    }
    return std::nullopt;
  }

  ActionIndex require_action(std::string_view label) const {
    auto a = parse_action(label);
    if (!a) fail(ErrorCode::ParseError, "unknown chain action '" + std::string(label) + "'");
    return *a;
  }

  /// True iff some sequence of at most horizon-1 increments sums to target,
  /// leaving room for the STOP.
  bool reachable(int target, int horizon) const {
    if (horizon < 1 || target < 0) return false;
    std::vector<char> can(static_cast<std::size_t>(target) + 1, 0);
    can[0] = 1;
    for (int k = 0; k < horizon - 1; ++k) {
      std::vector<char> next = can;
      for (int s = 0; s <= target; ++s) {
        if (!can[s]) continue;
        for (int inc : increments_) {
          if (s + inc <= target) next[s + inc] = 1;
        }
      }
      can.swap(next);
    }
    return can[target] != 0;
  }

  struct Pair {
    int target;
    int horizon;
  };
  const std::vector<Pair>& valid_pairs() const noexcept { return valid_pairs_; }

  ChainPrompt make_prompt(int target, int horizon, std::uint64_t seed) const {
    if (target < min_target_ || target > max_target_ || horizon < min_horizon_ || horizon > max_horizon_) {
      fail(ErrorCode::InvalidConfig, "target/horizon outside environment bounds");
    }
    if (!reachable(target, horizon)) {
      fail(ErrorCode::InvalidConfig,
           "target " + std::to_string(target) + " unreachable within horizon " + std::to_string(horizon));
    }
    return {target, horizon, seed, prompt_id(target, horizon, seed)};
  }

  static std::string prompt_id(int target, int horizon, std::uint64_t seed) {
    return "chain-t" + std::to_string(target) + "-h" + std::to_string(horizon) + "-" + std::to_string(seed);
  }

  /// Recovers (target, horizon) from an id produced by prompt_id().
  std::optional<ChainPrompt> parse_prompt_id(std::string_view id) const {
    auto take_int = [](std::string_view& s, std::uint64_t& out) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc() || p == s.data()) return false;
      s.remove_prefix(static_cast<std::size_t>(p - s.data()));
      return true;
    };
    std::string_view s = id;
    std::uint64_t t = 0, h = 0, seed = 0;
    if (!s.starts_with("chain-t")) return std::nullopt;
    s.remove_prefix(7);
    if (!take_int(s, t) || !s.starts_with("-h")) return std::nullopt;
    s.remove_prefix(2);
    if (!take_int(s, h) || !s.starts_with("-")) return std::nullopt;
    s.remove_prefix(1);
    if (!take_int(s, seed) || !s.empty()) return std::nullopt;
    const int ti = static_cast<int>(t), hi = static_cast<int>(h);
    if (ti < min_target_ || ti > max_target_ || hi < min_horizon_ || hi > max_horizon_ || !reachable(ti, hi)) {
      return std::nullopt;
    }
    return ChainPrompt{ti, hi, seed, std::string(id)};
  }

  /// Deterministic in seed, uniform over valid (target, horizon) pairs.
  ChainPrompt sample_prompt(std::uint64_t seed) const {
    rng::Engine eng(rng::splitmix64(seed));
    const auto& p = valid_pairs_[rng::uniform_index(eng, valid_pairs_.size())];
    return {p.target, p.horizon, seed, prompt_id(p.target, p.horizon, seed)};
  }

  // ---- policy state space: (target, horizon, accumulator, step index) ----

  int max_accumulator() const noexcept { return max_increment_ * max_horizon_; }

  std::size_t num_states() const noexcept {
    return static_cast<std::size_t>(max_target_ - min_target_ + 1) *
           static_cast<std::size_t>(max_horizon_ - min_horizon_ + 1) *
           static_cast<std::size_t>(max_accumulator() + 1) * static_cast<std::size_t>(max_horizon_);
  }

  StateIndex state_index(const ChainPrompt& prompt, int accumulator, int step) const {
    if (accumulator < 0 || accumulator > max_accumulator() || step < 0 || step >= prompt.horizon) {
      fail(ErrorCode::MissingState, "chain state outside the policy table");
    }
    std::size_t idx = static_cast<std::size_t>(prompt.target - min_target_);
    idx = idx * static_cast<std::size_t>(max_horizon_ - min_horizon_ + 1) +
          static_cast<std::size_t>(prompt.horizon - min_horizon_);
    idx = idx * static_cast<std::size_t>(max_accumulator() + 1) + static_cast<std::size_t>(accumulator);
    idx = idx * static_cast<std::size_t>(max_horizon_) + static_cast<std::size_t>(step);
    return idx;
  }

  SoftmaxPolicy make_policy() const { return SoftmaxPolicy(num_states(), num_actions()); }

  std::vector<ActionIndex> parse_actions(std::span<const std::string> steps) const {
    std::vector<ActionIndex> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(require_action(s));
    return out;
  }

  std::vector<std::string> labels(std::span<const ActionIndex> actions) const {
    std::vector<std::string> out;
    out.reserve(actions.size());
    for (auto a : actions) out.push_back(action_label(a));
    return out;
  }

  /// States visited by an action sequence, paired with the action taken.
  std::vector<StateAction> trace(const ChainPrompt& prompt, std::span<const ActionIndex> actions) const {
    std::vector<StateAction> path;
    path.reserve(actions.size());
    int acc = 0;
    for (std::size_t t = 0; t < actions.size(); ++t) {
      path.push_back({state_index(prompt, acc, static_cast<int>(t)), actions[t]});
      if (actions[t] == stop_action()) break;
      acc += increments_.at(actions[t]);
    }
    return path;
  }

  int verify_outcome(const ChainPrompt& prompt, std::span<const ActionIndex> actions) const {
    int acc = 0;
    for (std::size_t t = 0; t < actions.size(); ++t) {
      if (static_cast<int>(t) >= prompt.horizon) return 0;
      if (actions[t] == stop_action()) return acc == prompt.target ? 1 : 0;
      acc += increments_.at(actions[t]);
    }
    return 0;
  }

  int verify_outcome(const ChainPrompt& prompt, std::span<const std::string> steps) const {
    const auto actions = parse_actions(steps);
    return verify_outcome(prompt, std::span<const ActionIndex>(actions));
  }

  /// A sampled trajectory together with the state path needed for gradients.
  struct Rollout {
    ChainPrompt prompt;
    std::vector<ActionIndex> actions;
    std::vector<StateAction> path;
    Trajectory trajectory;
  };

  /// Samples until STOP or the horizon. Greedy decoding when `eng` is null.
  Rollout rollout(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, const ChainPrompt& prompt,
                  rng::Engine* eng) const {
    std::vector<ActionIndex> actions;
    std::vector<StateAction> path;
    double lp = 0.0, lp_ref = 0.0;
    int acc = 0;
    for (int t = 0; t < prompt.horizon; ++t) {
      const StateIndex s = state_index(prompt, acc, t);
      const ActionIndex a = eng ? policy.sample(s, *eng) : policy.greedy(s);
      actions.push_back(a);
      path.push_back({s, a});
      lp += policy.log_prob(s, a);
      lp_ref += reference.log_prob(s, a);
      if (a == stop_action()) break;
      acc += increments_.at(a);
    }
    const int outcome = verify_outcome(prompt, std::span<const ActionIndex>(actions));
    Trajectory traj(prompt.id, labels(actions), outcome, std::nullopt, lp, lp_ref);
    return {prompt, std::move(actions), std::move(path), std::move(traj)};
  }

  /// K independent samples from one seeded stream.
  std::vector<Rollout> rollout_group(const SoftmaxPolicy& policy, const SoftmaxPolicy& reference,
                                     const ChainPrompt& prompt, std::size_t k, std::uint64_t seed) const {
    if (k == 0) fail(ErrorCode::EmptyGroup, "rollout_group needs K >= 1");
    rng::Engine eng(rng::splitmix64(seed));
    std::vector<Rollout> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(rollout(policy, reference, prompt, &eng));
    return out;
  }

  static PromptGroup to_group(const std::vector<Rollout>& rollouts) {
    std::vector<Trajectory> members;
    members.reserve(rollouts.size());
    for (const auto& r : rollouts) members.push_back(r.trajectory);
    return PromptGroup(rollouts.front().prompt.id, std::move(members));
  }

 private:
  std::vector<int> increments_;
  int min_target_, max_target_, min_horizon_, max_horizon_;
  int max_increment_ = 1;
  std::vector<Pair> valid_pairs_;
};

/// Wrong answer whose pre-STOP actions are one increment repeated at least
/// `min_run` times.
inline bool is_fluent_trap(std::span<const std::string> steps, int outcome, std::size_t min_run = kTrapMinRun) {
  if (outcome != 0) return false;
  const std::string* first = nullptr;
  std::size_t run = 0;
  for (const auto& s : steps) {
    if (s == kStopLabel) break;
    if (!first) {
      first = &s;
    } else if (s != *first) {
      return false;
    }
    ++run;
  }
  return first != nullptr && run >= min_run;
}

inline double fluent_trap_rate(std::span<const Trajectory> trajectories, std::size_t min_run = kTrapMinRun) {
  if (trajectories.empty()) fail(ErrorCode::EmptyBatch, "fluent_trap_rate needs at least one trajectory");
  std::size_t n = 0;
  for (const auto& t : trajectories) n += is_fluent_trap(t.steps(), t.outcome(), min_run);
  return static_cast<double>(n) / static_cast<double>(trajectories.size());
}

}  // namespace progrs::env
