#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "progrs/advantage.hpp"
#include "progrs/grpo.hpp"
#include "progrs/policy.hpp"
#include "test_support.hpp"

using namespace progrs;

TEST(Policy, UniformAtInit) {
  SoftmaxPolicy p(3, 4);
  for (double v : p.probabilities(1)) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_NEAR(p.entropy(0), std::log(4.0), 1e-15);
  EXPECT_EQ(p.greedy(2), 0u);
}

TEST(Policy, MissingState) {
  SoftmaxPolicy p(2, 2);
  try {
    p.probabilities(2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingState);
  }
}

TEST(Policy, UpdateStep) {
  SoftmaxPolicy p(1, 2);
  std::vector<double> g{1.0, 0.0};
  const auto q = grpo::policy_update(p, g, 0.1);
  EXPECT_DOUBLE_EQ(q.logit(0, 0), -0.1);
  EXPECT_EQ(q.logit(0, 1), 0.0);
  EXPECT_THROW(grpo::policy_update(p, g, 0.0), Error);
  std::vector<double> wrong{1.0};
  EXPECT_THROW(grpo::policy_update(p, wrong, 0.1), Error);
}

TEST(Surrogate, RatioOneIsMinusMeanAdvantage) {
  std::vector<grpo::RatioAdvantage> b{{1.0, 0.5}, {1.0, -1.5}, {1.0, 2.0}};
  EXPECT_DOUBLE_EQ(grpo::clipped_surrogate_loss(b, {}), -(0.5 - 1.5 + 2.0) / 3.0);
}

TEST(Surrogate, AsymmetricClip) {
  // Ratio 1.25 sits inside the upper bound (1.28) but would be clipped by a
  // symmetric 0.2 bound.
  const std::vector<grpo::RatioAdvantage> b{{1.25, 1.0}};
  EXPECT_DOUBLE_EQ(grpo::clipped_surrogate_loss(b, {0.2, 0.28}), -1.25);
  EXPECT_DOUBLE_EQ(grpo::clipped_surrogate_loss(b, {0.2, 0.2}), -1.2);
  const std::vector<grpo::RatioAdvantage> low{{0.7, -1.0}};
  EXPECT_DOUBLE_EQ(grpo::clipped_surrogate_loss(low, {0.2, 0.28}), 0.8);
}

TEST(Surrogate, EmptyBatch) {
  try {
    grpo::clipped_surrogate_loss({}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyBatch);
  }
}

TEST(Surrogate, LogRatioClamp) {
  EXPECT_DOUBLE_EQ(grpo::sequence_ratio(100.0, 0.0), std::exp(20.0));
  EXPECT_DOUBLE_EQ(grpo::sequence_ratio(-100.0, 0.0), std::exp(-20.0));
}

TEST(Gradient, MatchesFiniteDifferences) {
  rng::Engine eng(2024);
  for (int i = 0; i < 200; ++i) {
    const auto g = progrs::testing::random_gradient_instance(eng);
    ASSERT_LE(progrs::testing::gradient_relative_error(g), 1e-5) << "instance " << i;
  }
}

TEST(Gradient, ClippedSamplesAreInert) {
  // Positive advantage above 1+hi, negative below 1-lo: no gradient at all.
  SoftmaxPolicy p(1, 2);
  p.logit(0, 0) = 1.0;
  const std::vector<StateAction> path{{0, 0}};
  const double lp = p.log_prob(path);
  std::vector<grpo::PolicySample> s{{path, lp - std::log(1.5), 1.0}, {path, lp - std::log(0.5), -1.0}};
  for (double v : grpo::loss_gradient(p, s, {})) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, ZeroAdvantageIsNoOp) {
  rng::Engine eng(9);
  for (int i = 0; i < 50; ++i) {
    auto g = progrs::testing::random_gradient_instance(eng);
    for (auto& s : g.samples) s.advantage = 0.0;
    const auto grad = grpo::loss_gradient(g.policy, g.samples, g.bounds);
    const auto next = grpo::policy_update(g.policy, grad, 1.0);
    EXPECT_EQ(next, g.policy);
  }
}

TEST(Gradient, TwoArmBanditConverges) {
  // Arm 1 pays, arm 0 does not; group-normalized advantages and a refreshed
  // reference drive the policy onto arm 1.
  SoftmaxPolicy p(1, 2);
  rng::Engine eng(1);
  for (int step = 0; step < 200; ++step) {
    std::vector<grpo::PolicySample> batch;
    std::vector<int> rewards;
    std::vector<ActionIndex> acts;
    for (int k = 0; k < 8; ++k) {
      const auto a = p.sample(0, eng);
      acts.push_back(a);
      rewards.push_back(a == 1 ? 1 : 0);
    }
    const auto adv = advantage::outcome_advantage(rewards, 1e-6);
    for (int k = 0; k < 8; ++k) {
      const std::vector<StateAction> path{{0, acts[k]}};
      batch.push_back({path, p.log_prob(path), adv[k]});
    }
    p = grpo::policy_update(p, grpo::loss_gradient(p, batch, {}), 0.5);
  }
  EXPECT_GT(p.probabilities(0)[1], 0.99);
}

TEST(Diagnostics, Basic) {
  SoftmaxPolicy p(2, 2);
  std::vector<grpo::PolicySample> s{{{{0, 0}}, 0.0, 1.0}, {{{1, 1}, {0, 1}}, 0.0, -1.0}};
  const auto d = grpo::diagnostics(p, s);
  EXPECT_EQ(d.advantage_mean, 0.0);
  EXPECT_EQ(d.advantage_std, 1.0);
  EXPECT_NEAR(d.mean_token_entropy, std::log(2.0), 1e-15);
}
