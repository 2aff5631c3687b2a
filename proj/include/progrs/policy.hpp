#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "progrs/error.hpp"
#include "progrs/random.hpp"

namespace progrs {

using StateIndex = std::size_t;
using ActionIndex = std::size_t;

struct StateAction {
  StateIndex state = 0;
  ActionIndex action = 0;

  bool operator==(const StateAction&) const = default;
};

/// Dense tabular softmax policy: one row of logits per state.
class SoftmaxPolicy {
 public:
  SoftmaxPolicy() = default;
  SoftmaxPolicy(std::size_t num_states, std::size_t num_actions)
      : num_states_(num_states), num_actions_(num_actions), logits_(num_states * num_actions, 0.0) {}

  std::size_t num_states() const noexcept { return num_states_; }
  std::size_t num_actions() const noexcept { return num_actions_; }
  std::span<const double> logits() const noexcept { return logits_; }
  std::span<double> logits() noexcept { return logits_; }

  double& logit(StateIndex s, ActionIndex a) { return logits_[offset(s, a)]; }
  double logit(StateIndex s, ActionIndex a) const { return logits_[offset(s, a)]; }

  std::span<const double> row(StateIndex s) const {
    check_state(s);
    return std::span<const double>(logits_).subspan(s * num_actions_, num_actions_);
  }

  std::vector<double> probabilities(StateIndex s) const {
    const auto z = row(s);
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(num_actions_);
    double total = 0.0;
    for (std::size_t a = 0; a < num_actions_; ++a) {
      p[a] = std::exp(z[a] - m);
      total += p[a];
    }
    for (double& v : p) v /= total;
    return p;
  }

  double log_prob(StateIndex s, ActionIndex a) const {
    const auto z = row(s);
    if (a >= num_actions_) fail(ErrorCode::MissingState, "action index out of range");
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - m);
    return z[a] - m - std::log(total);
  }

  double log_prob(std::span<const StateAction> path) const {
    double lp = 0.0;
    for (const auto& sa : path) lp += log_prob(sa.state, sa.action);
    return lp;
  }

  /// Action-distribution entropy at a state, in nats.
  double entropy(StateIndex s) const {
    double h = 0.0;
    for (double p : probabilities(s)) {
      if (p > 0.0) h -= p * std::log(p);
    }
    return h;
  }

  /// Argmax action; ties go to the lowest index.
  ActionIndex greedy(StateIndex s) const {
    const auto z = row(s);
    return static_cast<ActionIndex>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  ActionIndex sample(StateIndex s, rng::Engine& eng) const {
    const auto p = probabilities(s);
    const double u = rng::uniform01(eng);
    double acc = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
      acc += p[a];
      if (u < acc) return a;
    }
    return p.size() - 1;
  }

  bool operator==(const SoftmaxPolicy&) const = default;

 private:
  void check_state(StateIndex s) const {
    if (s >= num_states_) fail(ErrorCode::MissingState, "state " + std::to_string(s) + " not in policy table");
  }
  std::size_t offset(StateIndex s, ActionIndex a) const {
    check_state(s);
    if (a >= num_actions_) fail(ErrorCode::MissingState, "action index out of range");
    return s * num_actions_ + a;
  }

  std::size_t num_states_ = 0;
  std::size_t num_actions_ = 0;
  std::vector<double> logits_;
};

}  // namespace progrs
