#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "progrs/advantage.hpp"
#include "progrs/coherence.hpp"
#include "progrs/random.hpp"
#include "test_support.hpp"

using namespace progrs;
using progrs::testing::make_traj;

namespace {

std::vector<double> oa(std::vector<int> r, double eps = 1e-6) { return advantage::outcome_advantage(r, eps); }

}  // namespace

// ---- data model ----

TEST(Trajectory, RejectsEmptySteps) {
  try {
    Trajectory("p", {}, 1, std::nullopt, 0.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTrajectory);
  }
}

TEST(Trajectory, OutcomeMustBeBinary) {
  TrajectoryDraft d{"p", {"+1"}, 0.5, std::nullopt, 0.0, 0.0};
  try {
    Trajectory::from_draft(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutcomeNotBinary);
    EXPECT_EQ(e.category(), ErrorCategory::Data);
  }
}

TEST(Trajectory, ScoreLengthMustMatch) {
  EXPECT_THROW(make_traj("p", {"+1", "STOP"}, 1, {0.5}), Error);
}

TEST(Trajectory, NonFiniteLogProb) {
  try {
    Trajectory("p", {"+1"}, 0, std::nullopt, NAN, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLogProb);
  }
}

TEST(StepScoreSeries, RejectsOutOfRangeAndUnordered) {
  EXPECT_THROW(StepScoreSeries({1.2}), Error);
  EXPECT_THROW(StepScoreSeries({0.5}, std::vector<double>{0.6}, std::vector<double>{0.7}), Error);
  EXPECT_THROW(StepScoreSeries({0.5}, std::vector<double>{0.4}, std::nullopt), Error);
  EXPECT_NO_THROW(StepScoreSeries({0.5}, std::vector<double>{0.4}, std::vector<double>{0.6}));
}

TEST(PromptGroup, MixedIds) {
  GroupDraft g{"a", {{"a", {"+1"}, 1, std::nullopt, 0, 0}, {"b", {"+1"}, 0, std::nullopt, 0, 0}}};
  try {
    validate_group(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MixedPromptIds);
  }
}

TEST(PromptGroup, Empty) {
  try {
    validate_group({"a", {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyGroup);
  }
}

TEST(ShapingConfig, Validation) {
  ShapingConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha_coh = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.window_sizes = {};
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.epsilon_outcome = 0.0;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::Config);
  }
}

// ---- outcome advantage ----

TEST(OutcomeAdvantage, OneCorrectOfFour) {
  const auto a = oa({1, 0, 0, 0});
  EXPECT_NEAR(a[0], std::sqrt(3.0), 1e-5);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(a[i], -1.0 / std::sqrt(3.0), 1e-5);
  EXPECT_NEAR(a[0], 1.732046807578115, 1e-12);
  EXPECT_NEAR(a[1], -0.5773489358593717, 1e-12);
}

TEST(OutcomeAdvantage, Pair) {
  const auto a = oa({1, 0});
  EXPECT_NEAR(a[0], 0.999998000004, 1e-12);
  EXPECT_NEAR(a[1], -0.999998000004, 1e-12);
}

TEST(OutcomeAdvantage, UniformGroupsAreExactlyZero) {
  for (auto r : {std::vector<int>{1, 1, 1}, std::vector<int>{0, 0, 0, 0}, std::vector<int>{1}}) {
    for (double a : oa(r)) EXPECT_EQ(a, 0.0);
  }
}

TEST(OutcomeAdvantage, ZeroSumProperty) {
  rng::Engine eng(7);
  for (int it = 0; it < 2000; ++it) {
    const std::size_t k = 2 + rng::uniform_index(eng, 15);
    std::vector<int> r(k);
    for (auto& x : r) x = static_cast<int>(rng::uniform_index(eng, 2));
    const auto a = oa(r);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.0, 1e-9);
  }
}

// ---- centering ----

TEST(Centering, WorkedExample) {
  // Two incorrect members around a mean of 0.643; the correct one is untouched.
  const std::vector<int> out{1, 0, 0};
  const std::vector<double> raw{0.9, 0.736, 0.55};
  const auto c = advantage::center_process_scores(out, raw);
  EXPECT_EQ(c[0], 0.9);
  EXPECT_NEAR(c[1], 0.093, 1e-9);
  EXPECT_NEAR(c[2], -0.093, 1e-9);
}

TEST(Centering, NoIncorrectMembersIsIdentity) {
  const std::vector<int> out{1, 1};
  const std::vector<double> raw{0.3, 0.8};
  EXPECT_EQ(advantage::center_process_scores(out, raw), raw);
  EXPECT_EQ(advantage::incorrect_mean(out, raw), 0.0);
}

TEST(Centering, LengthMismatch) {
  const std::vector<int> out{1, 0};
  const std::vector<double> raw{0.3};
  try {
    advantage::center_process_scores(out, raw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(Centering, ZeroMeanAndRankingProperty) {
  rng::Engine eng(11);
  for (int it = 0; it < 5000; ++it) {
    const std::size_t k = 2 + rng::uniform_index(eng, 15);
    std::vector<int> out(k);
    std::vector<double> raw(k);
    for (std::size_t i = 0; i < k; ++i) {
      out[i] = static_cast<int>(rng::uniform_index(eng, 2));
      raw[i] = rng::uniform01(eng);
    }
    const auto c = advantage::center_process_scores(out, raw);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (out[i] == 1) {
        EXPECT_EQ(c[i], raw[i]);
        continue;
      }
      sum += c[i];
      ++n;
      for (std::size_t j = 0; j < k; ++j) {
        if (out[j] == 0) {
          EXPECT_EQ(raw[i] < raw[j], c[i] < c[j]);
        }
      }
    }
    if (n) {
      EXPECT_NEAR(sum / static_cast<double>(n), 0.0, 1e-12);
    }
  }
}

// ---- coherence ----

TEST(Coherence, Windows) {
  const auto w = coherence::partition_windows(7, 3);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[2].begin, 6u);
  EXPECT_EQ(w[2].end, 7u);
  EXPECT_EQ(coherence::partition_windows(3, 5).size(), 1u);
}

TEST(Coherence, GoldenSeries) {
  ShapingConfig cfg;
  const std::vector<double> s{0.8, 0.6, 1.0};
  const auto windows = coherence::partition_windows(3, 3);
  const auto st = coherence::window_stats(s, windows);
  ASSERT_EQ(st.size(), 1u);
  EXPECT_NEAR(st[0].mu, 0.8, 1e-15);
  EXPECT_NEAR(st[0].sigma, 0.16329931618554522, 1e-12);
  EXPECT_NEAR(coherence::coherence_score(st[0], 2.0, 1e-6), 0.5318513045318509, 1e-12);
  EXPECT_NEAR(coherence::trajectory_score_at_scale(s, 3, cfg), 0.6391107827191105, 1e-12);
  EXPECT_NEAR(coherence::multi_scale_score(s, cfg), 0.639114, 1e-5);
}

TEST(Coherence, MultiScaleGolden) {
  ShapingConfig cfg;
  cfg.window_sizes = {1, 3};
  const std::vector<double> s{0.8, 0.6, 1.0};
  EXPECT_NEAR(coherence::multi_scale_score(s, cfg), 0.7195553913595553, 1e-12);
}

TEST(Coherence, ConstantSeriesIsPlainMean) {
  ShapingConfig cfg;
  for (double v : {0.0, 0.25, 0.5, 1.0}) {
    const std::vector<double> s(7, v);
    EXPECT_EQ(coherence::multi_scale_score(s, cfg), v);
  }
  const std::vector<double> s(7, 0.7);
  EXPECT_DOUBLE_EQ(coherence::multi_scale_score(s, cfg), 0.7);
}

TEST(Coherence, SingletonWindowsCarryNoPenalty) {
  ShapingConfig cfg;
  cfg.window_sizes = {1};
  const std::vector<double> s{0.2, 0.9, 0.4};
  EXPECT_NEAR(coherence::multi_scale_score(s, cfg), 0.5, 1e-15);
}

TEST(Coherence, NoVariancePenaltyCollapsesToMean) {
  ShapingConfig cfg;
  cfg.lambda_var = 0.0;
  rng::Engine eng(3);
  for (int it = 0; it < 500; ++it) {
    std::vector<double> s(1 + rng::uniform_index(eng, 12));
    for (auto& x : s) x = rng::uniform01(eng);
    const double score = coherence::trajectory_score_at_scale(s, 3, cfg);
    const auto st = coherence::window_stats(s, coherence::partition_windows(s.size(), 3));
    double mean_mu = 0.0;
    for (const auto& w : st) mean_mu += w.mu;
    mean_mu /= static_cast<double>(st.size());
    EXPECT_NEAR(score, mean_mu, 1e-12);
  }
}

TEST(Coherence, BoundedAndBelowMean) {
  ShapingConfig cfg;
  rng::Engine eng(5);
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> s(1 + rng::uniform_index(eng, 12));
    for (auto& x : s) x = rng::uniform01(eng);
    const auto st = coherence::window_stats(s, coherence::partition_windows(s.size(), 3));
    for (const auto& w : st) {
      const double c = coherence::coherence_score(w, cfg.lambda_var, cfg.epsilon_coherence);
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, w.mu + 1e-15);
      const double r = coherence::blended_window_score(w, cfg);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
}

TEST(Coherence, MonotoneInVariance) {
  // Same window mean, growing spread: the coherence score never rises.
  ShapingConfig cfg;
  double prev = 2.0;
  for (double d = 0.0; d <= 0.4; d += 0.02) {
    const std::vector<double> s{0.5 - d, 0.5, 0.5 + d};
    const double v = coherence::multi_scale_score(s, cfg);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Coherence, PermutationSensitivityAcrossWindows) {
  ShapingConfig cfg;
  const std::vector<double> smooth{0.2, 0.2, 0.2, 0.9, 0.9, 0.9};
  const std::vector<double> jagged{0.2, 0.9, 0.2, 0.9, 0.2, 0.9};
  EXPECT_GT(coherence::multi_scale_score(smooth, cfg), coherence::multi_scale_score(jagged, cfg));
}

TEST(Coherence, ExponentClampOnDegenerateWindow) {
  const coherence::WindowStats w{1, {0, 3}, 1e-12, 0.5};
  EXPECT_NEAR(coherence::coherence_score(w, 2.0, 1e-6), 1e-12 * std::exp(-50.0), 1e-40);
}

// ---- final advantage ----

TEST(FinalAdvantage, CaseStudy) {
  // Incorrect member with raw score 0.736 in a group whose incorrect mean is 0.643.
  const std::vector<int> out{0, 0};
  const std::vector<double> raw{0.736, 0.55};
  const auto ga = advantage::final_advantage_from_raw(out, raw, ablation_mode(ShapingConfig{}, AblationMode::Full));
  EXPECT_EQ(ga.members[0].outcome_advantage, 0.0);
  EXPECT_NEAR(ga.mu_incorrect, 0.643, 1e-12);
  EXPECT_NEAR(ga.members[0].centered_process, 0.093, 1e-9);
  EXPECT_NEAR(ga.members[0].final, 0.0465, 5e-4);
}

TEST(FinalAdvantage, FrozenMixedGroup) {
  const std::vector<int> out{1, 0, 0};
  const std::vector<double> raw{0.9, 0.7, 0.5};
  const auto ga = advantage::final_advantage_from_raw(out, raw, ablation_mode(ShapingConfig{}, AblationMode::Full));
  EXPECT_NEAR(ga.members[0].final, 1.8642105623794591, 1e-12);
  EXPECT_NEAR(ga.members[1].final, -0.6571052811897294, 1e-12);
  EXPECT_NEAR(ga.members[2].final, -0.7571052811897295, 1e-12);
}

TEST(FinalAdvantage, Modes) {
  const std::vector<int> out{0, 0, 1};
  const std::vector<double> raw{0.8, 0.4, 0.3};
  const ShapingConfig cfg;
  const auto nc = advantage::final_advantage_from_raw(out, raw, ablation_mode(cfg, AblationMode::NoCentering));
  EXPECT_EQ(nc.members[0].centered_process, 0.8);
  EXPECT_NEAR(nc.mu_incorrect, 0.6, 1e-15);
  const auto oo = advantage::final_advantage_from_raw(out, raw, ablation_mode(cfg, AblationMode::OutcomeOnly));
  const auto a = oa(out);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(oo.members[i].final, a[i]);
  EXPECT_EQ(ablation_mode(cfg, AblationMode::NoCoherence).config.alpha_coh, 0.0);
}

TEST(FinalAdvantage, OutcomeDominanceGrid) {
  // For every K in {2,3,4} and every score assignment on a 0.1 grid, the
  // worst correct member still outranks the best incorrect one.
  const auto pipeline = ablation_mode(ShapingConfig{}, AblationMode::Full);
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  for (std::size_t k = 2; k <= 4; ++k) {
    for (std::size_t mask = 1; mask + 1 < (1u << k); ++mask) {
      std::vector<int> out(k);
      for (std::size_t i = 0; i < k; ++i) out[i] = (mask >> i) & 1u;
      std::size_t total = 1;
      for (std::size_t i = 0; i < k; ++i) total *= grid.size();
      for (std::size_t code = 0; code < total; ++code) {
        std::vector<double> raw(k);
        std::size_t c = code;
        for (std::size_t i = 0; i < k; ++i, c /= grid.size()) raw[i] = grid[c % grid.size()];
        const auto ga = advantage::final_advantage_from_raw(out, raw, pipeline);
        double worst_correct = 1e9, best_incorrect = -1e9;
        for (std::size_t i = 0; i < k; ++i) {
          if (out[i]) worst_correct = std::min(worst_correct, ga.members[i].final);
          else best_incorrect = std::max(best_incorrect, ga.members[i].final);
        }
        ASSERT_GT(worst_correct, best_incorrect) << "K=" << k << " mask=" << mask << " code=" << code;
      }
    }
  }
}

TEST(FinalAdvantage, MissingScores) {
  PromptGroup g("p", {Trajectory("p", {"+1"}, 1, std::nullopt, 0, 0), Trajectory("p", {"+2"}, 0, std::nullopt, 0, 0)});
  const auto pipeline = ablation_mode(ShapingConfig{}, AblationMode::Full);
  try {
    advantage::final_advantage(g, pipeline);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingStepScores);
  }
  const auto ga = advantage::final_advantage(g, pipeline, [](const Trajectory&) { return StepScoreSeries({0.5}); });
  EXPECT_NEAR(ga.members[0].raw_process, 0.5, 1e-15);
}

TEST(AblationMode, RoundTripNames) {
  for (auto m : {AblationMode::Full, AblationMode::NoCoherence, AblationMode::NoCentering, AblationMode::OutcomeOnly}) {
    EXPECT_EQ(parse_ablation_mode(to_string(m)), m);
  }
  EXPECT_FALSE(parse_ablation_mode("dapo"));
}
