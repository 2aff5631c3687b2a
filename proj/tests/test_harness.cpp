#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "progrs/harness/config.hpp"
#include "progrs/harness/experiment.hpp"
#include "progrs/harness/metrics.hpp"
#include "progrs/harness/trajectory_io.hpp"

using namespace progrs;
using namespace progrs::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("progrs_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.training_steps = 5;
  cfg.prompts_per_step = 3;
  cfg.eval_set_size = 8;
  cfg.num_seeds = 2;
  cfg.scorer = scoring::ScorerKind::Miscalibrated;
  return cfg;
}

}  // namespace

// ---- trajectory JSONL ----

TEST(TrajectoryIo, RoundTrip) {
  std::vector<PromptGroup> groups{
      PromptGroup("a", {Trajectory("a", {"+1", "STOP"}, 1, StepScoreSeries({0.25, 1.0}, std::vector<double>{0.2, 0.9},
                                                                            std::vector<double>{0.3, 1.0}),
                                   -1.5, -1.25),
                        Trajectory("a", {"+2"}, 0, std::nullopt, -0.5, -0.75)}),
      PromptGroup("b", {Trajectory("b", {"STOP"}, 0, StepScoreSeries({0.1}), -2.0, -2.0)})};
  std::stringstream ss;
  write_trajectories(ss, groups);
  EXPECT_EQ(read_trajectories(ss), groups);
}

TEST(TrajectoryIo, NonBinaryOutcome) {
  std::stringstream ss(R"({"prompt_id":"a","steps":["+1"],"outcome":"yes","logprob_policy":0,"logprob_ref":0})");
  try {
    read_trajectories(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  std::stringstream half(R"({"prompt_id":"a","steps":["+1"],"outcome":0.5,"logprob_policy":0,"logprob_ref":0})");
  try {
    read_trajectories(half);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutcomeNotBinary);
  }
}

TEST(TrajectoryIo, InterleavedPromptsGroupByFirstAppearance) {
  std::stringstream ss;
  for (const char* id : {"b", "a", "b", "a", "b"}) {
    ss << R"({"prompt_id":")" << id << R"(","steps":["+1"],"outcome":0,"logprob_policy":0,"logprob_ref":0,"x":1})"
       << "\n\n";
  }
  const auto groups = read_trajectories(ss);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].prompt_id(), "b");
  EXPECT_EQ(groups[0].size(), 3u);
  EXPECT_EQ(groups[1].size(), 2u);
}

TEST(TrajectoryIo, Malformed) {
  std::stringstream bad("{not json");
  EXPECT_THROW(read_trajectories(bad), Error);
  std::stringstream missing(R"({"prompt_id":"a","steps":["+1"],"outcome":1})");
  EXPECT_THROW(read_trajectories(missing), Error);
  std::stringstream scores(
      R"({"prompt_id":"a","steps":["+1"],"outcome":1,"logprob_policy":0,"logprob_ref":0,"step_scores":{"median":[0.1,0.2]}})");
  try {
    read_trajectories(scores);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScoreLengthMismatch);
  }
}

// ---- config ----

TEST(Config, TextRoundTrip) {
  ExperimentConfig cfg;
  cfg.shaping.window_sizes = {1, 3, 5};
  cfg.shaping.lambda_prm = 0.3;
  cfg.scorer = scoring::ScorerKind::Noisy;
  cfg.noise_delta = 0.2;
  cfg.mode = AblationMode::NoCentering;
  cfg.learning_rate = 0.1 + 0.2;
  cfg.output_dir = "runs/x";
  const auto back = parse_config(cfg.to_text());
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(back.learning_rate, cfg.learning_rate);
  EXPECT_EQ(back.shaping, cfg.shaping);
}

TEST(Config, UnknownKeyAndBadValues) {
  for (const char* text : {"lamda_prm = 0.5", "group_size = four", "alpha_coh = 2", "pass_k_samples = 5",
                           "scorer = magic", "no equals sign"}) {
    try {
      parse_config(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), ErrorCategory::Config) << text;
    }
  }
}

TEST(Config, CommentsAndShorthand) {
  const auto cfg = parse_config("# header\nepsilon = 1e-8  # both\n\nmode = outcome-only\n");
  EXPECT_EQ(cfg.shaping.epsilon_outcome, 1e-8);
  EXPECT_EQ(cfg.shaping.epsilon_coherence, 1e-8);
  EXPECT_EQ(cfg.mode, AblationMode::OutcomeOnly);
}

// ---- metrics ----

TEST(Metrics, PassAtK) {
  EXPECT_EQ(pass_at_k(10, 0, 5), 0.0);
  EXPECT_EQ(pass_at_k(10, 10, 1), 1.0);
  EXPECT_NEAR(pass_at_k(10, 3, 1), 0.3, 1e-15);
  EXPECT_NEAR(pass_at_k(10, 2, 5), 1.0 - 56.0 / 252.0, 1e-15);
  EXPECT_EQ(pass_at_k(10, 6, 5), 1.0);
  EXPECT_THROW(pass_at_k(4, 1, 5), Error);
  for (std::size_t c = 0; c <= 10; ++c) {
    EXPECT_LE(pass_at_k(10, c, 1), pass_at_k(10, c, 5));
    EXPECT_LE(pass_at_k(10, c, 5), pass_at_k(10, c, 10));
  }
}

TEST(Metrics, EmitAndReread) {
  const auto dir = scratch("metrics");
  MetricsRow r{0, 0.5, 0.25, 0.5, 0.75, 3.5, 0.0, 1.0, 1.386294, 0.125, 0.04};
  emit_metrics({r}, (dir / "m.csv").string());
  const auto text = slurp(dir / "m.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "step,pass_at_1,pass_at_k1,pass_at_k5,pass_at_k10,mean_steps_per_trajectory,advantage_mean,"
            "advantage_std,entropy,fluent_trap_rate,centering_offset");
  const auto rows = read_metrics((dir / "m.csv").string());
  emit_metrics(rows, (dir / "again.csv").string());
  EXPECT_EQ(slurp(dir / "again.csv"), text);
  EXPECT_THROW(emit_metrics({}, (dir / "none.csv").string()), Error);
}

// ---- experiment ----

TEST(Experiment, DeterministicAcrossRuns) {
  const auto cfg = small_config();
  const auto a = run_training(cfg, 3, AblationMode::Full);
  const auto b = run_training(cfg, 3, AblationMode::Full);
  EXPECT_EQ(metrics_csv(a.rows), metrics_csv(b.rows));
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_EQ(a.rows.size(), cfg.training_steps + 1);
  EXPECT_NE(metrics_csv(run_training(cfg, 4, AblationMode::Full).rows), metrics_csv(a.rows));
}

TEST(Experiment, ZeroStepsGivesOneRowAndUntrainedPolicy) {
  auto cfg = small_config();
  cfg.training_steps = 0;
  const auto r = run_training(cfg, 0, AblationMode::Full);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.policy, make_env(cfg).make_policy());
}

TEST(Experiment, StepZeroIsSharedAcrossModes) {
  const auto cfg = small_config();
  const auto env = make_env(cfg);
  const auto scorer = make_scorer(cfg, env);
  const auto policy = env.make_policy();
  std::vector<std::vector<PromptGroup>> batches;
  for (auto m : kAllModes) {
    batches.push_back(sample_batch(cfg, env, *scorer, ablation_mode(cfg.shaping, m), policy, policy, 5, 0).groups);
  }
  for (const auto& b : batches) EXPECT_EQ(b, batches.front());
  const auto full = run_training(cfg, 5, AblationMode::Full).rows.front();
  const auto oo = run_training(cfg, 5, AblationMode::OutcomeOnly).rows.front();
  EXPECT_EQ(full.pass_at_1, oo.pass_at_1);
  EXPECT_EQ(full.fluent_trap_rate, oo.fluent_trap_rate);
}

TEST(Experiment, OutcomeOnlyIgnoresAllWrongGroups) {
  auto cfg = small_config();
  cfg.prompts_per_step = 20;
  const auto env = make_env(cfg);
  const auto scorer = make_scorer(cfg, env);
  const auto policy = env.make_policy();
  const auto batch =
      sample_batch(cfg, env, *scorer, ablation_mode(cfg.shaping, AblationMode::OutcomeOnly), policy, policy, 1, 0);
  std::size_t all_wrong = 0;
  for (std::size_t g = 0; g < batch.groups.size(); ++g) {
    if (batch.advantages[g].n_incorrect != batch.groups[g].size()) continue;
    ++all_wrong;
    for (const auto& m : batch.advantages[g].members) EXPECT_EQ(m.final, 0.0);
  }
  EXPECT_GT(all_wrong, 0u);
}

TEST(Experiment, PolicySnapshotRoundTrip) {
  const auto dir = scratch("policy");
  auto cfg = small_config();
  const auto r = run_training(cfg, 1, AblationMode::Full);
  save_policy((dir / "p.json").string(), r.policy, cfg);
  ExperimentConfig other;
  other.env_max_target = 5;
  EXPECT_EQ(load_policy((dir / "p.json").string(), other), r.policy);
  EXPECT_EQ(other.env_max_target, cfg.env_max_target);
}

TEST(Experiment, AblationShape) {
  auto cfg = small_config();
  cfg.training_steps = 2;
  const auto report = run_ablation(cfg);
  EXPECT_EQ(report.modes.size(), 4u);
  EXPECT_EQ(report.seeds, (std::vector<std::uint64_t>{0, 1}));
  for (const auto& m : report.modes) EXPECT_EQ(m.final_rows.size(), 2u);
  const auto csv = ablation_summary_csv(report);
  EXPECT_NE(csv.find("no-centering,1,"), std::string::npos);
}

TEST(Experiment, FileScorerMissingEntryNamesTheStep) {
  const auto dir = scratch("filescorer");
  {
    std::ofstream(dir / "s.jsonl") << R"({"prompt_id":"none","step_index":0,"median":0.5})" << "\n";
  }
  auto cfg = small_config();
  cfg.scorer = scoring::ScorerKind::FromFile;
  cfg.scorer_file = (dir / "s.jsonl").string();
  try {
    run_training(cfg, 0, AblationMode::Full);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScorerEvaluationFailure);
    EXPECT_NE(std::string(e.what()).find("training step 0"), std::string::npos);
  }
}
