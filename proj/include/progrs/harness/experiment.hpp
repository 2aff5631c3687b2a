#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "progrs/advantage.hpp"
#include "progrs/grpo.hpp"
#include "progrs/harness/config.hpp"
#include "progrs/harness/metrics.hpp"
#include "progrs/random.hpp"
#include "progrs/step_scoring.hpp"
#include "progrs/synthetic_env.hpp"

namespace progrs::harness {

// Seed-stream tags. Rollout and prompt streams depend only on (seed, step,
// slot), never on the ablation mode, so every mode sees the same step-0 batch.
enum StreamTag : std::uint64_t { kPromptStream = 1, kRolloutStream = 2, kEvalPromptStream = 3, kEvalSampleStream = 4 };

inline env::ChainEnv make_env(const ExperimentConfig& cfg) {
  return env::ChainEnv(cfg.env_increments, cfg.env_min_target, cfg.env_max_target, cfg.env_min_horizon,
                       cfg.env_max_horizon);
}

inline std::shared_ptr<const scoring::StepScorer> make_scorer(const ExperimentConfig& cfg, scoring::ScorerKind kind,
                                                             const env::ChainEnv& env) {
  using namespace scoring;
  auto oracle = [&] { return std::make_shared<const OracleScorer>(env, std::nullopt, cfg.oracle_state_cap); };
  switch (kind) {
    case ScorerKind::OracleDP: return oracle();
    case ScorerKind::Miscalibrated: return std::make_shared<const MiscalibratedScorer>(oracle(), cfg.miscalibration);
    case ScorerKind::Noisy:
      return std::make_shared<const NoisyScorer>(make_scorer(cfg, cfg.noisy_base, env), cfg.noise_delta,
                                                 cfg.noise_seed);
    case ScorerKind::Constant: return std::make_shared<const ConstantScorer>(cfg.constant_score);
    case ScorerKind::FromFile: return std::make_shared<const FromFileScorer>(FromFileScorer::load(cfg.scorer_file));
  }
  fail(ErrorCode::InvalidConfig, "unknown scorer kind");
}

inline std::shared_ptr<const scoring::StepScorer> make_scorer(const ExperimentConfig& cfg, const env::ChainEnv& env) {
  return make_scorer(cfg, cfg.scorer, env);
}

inline std::vector<env::ChainPrompt> evaluation_prompts(const env::ChainEnv& env, std::uint64_t seed,
                                                        std::size_t count) {
  std::vector<env::ChainPrompt> out;
  out.reserve(count);
  for (std::size_t e = 0; e < count; ++e) out.push_back(env.sample_prompt(rng::derive_seed(seed, {kEvalPromptStream, e})));
  return out;
}

struct EvalResult {
  double pass_at_1 = 0.0;  // greedy
  double pass_at_k1 = 0.0;
  double pass_at_k5 = 0.0;
  double pass_at_k10 = 0.0;
  double mean_steps = 0.0;
  double fluent_trap_rate = 0.0;
};

/// Greedy pass@1 plus unbiased pass@{1,5,10} from `samples` temperature-1
/// draws per prompt. Length and fluent-trap statistics use the sampled draws.
inline EvalResult evaluate(const env::ChainEnv& env, const SoftmaxPolicy& policy,
                           const std::vector<env::ChainPrompt>& prompts, std::size_t samples,
                           std::uint64_t sample_seed) {
  EvalResult r;
  std::size_t steps = 0, traps = 0, draws = 0;
  for (std::size_t e = 0; e < prompts.size(); ++e) {
    const auto greedy = env.rollout(policy, policy, prompts[e], nullptr);
    r.pass_at_1 += greedy.trajectory.outcome();
    rng::Engine eng(rng::derive_seed(sample_seed, {e}));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples; ++i) {
      const auto ro = env.rollout(policy, policy, prompts[e], &eng);
      correct += ro.trajectory.outcome();
      steps += ro.trajectory.length();
      traps += env::is_fluent_trap(ro.trajectory.steps(), ro.trajectory.outcome());
      ++draws;
    }
    r.pass_at_k1 += pass_at_k(samples, correct, 1);
    r.pass_at_k5 += pass_at_k(samples, correct, 5);
    r.pass_at_k10 += pass_at_k(samples, correct, 10);
  }
  const double n = static_cast<double>(prompts.size());
  r.pass_at_1 /= n;
  r.pass_at_k1 /= n;
  r.pass_at_k5 /= n;
  r.pass_at_k10 /= n;
  r.mean_steps = static_cast<double>(steps) / static_cast<double>(draws);
  r.fluent_trap_rate = static_cast<double>(traps) / static_cast<double>(draws);
  return r;
}

/// One scored, shaped training batch.
struct ShapedBatch {
  std::vector<PromptGroup> groups;
  std::vector<advantage::GroupAdvantages> advantages;
  std::vector<grpo::PolicySample> samples;
  double centering_offset = 0.0;  // mean mu_incorrect over groups with an incorrect member
};

inline ShapedBatch sample_batch(const ExperimentConfig& cfg, const env::ChainEnv& env,
                                const scoring::StepScorer& scorer, const ShapingPipeline& pipeline,
                                const SoftmaxPolicy& policy, const SoftmaxPolicy& reference, std::uint64_t seed,
                                std::size_t step) {
  ShapedBatch batch;
  double offset_sum = 0.0;
  std::size_t offset_groups = 0;
  for (std::size_t p = 0; p < cfg.prompts_per_step; ++p) {
    const auto prompt = env.sample_prompt(rng::derive_seed(seed, {kPromptStream, step, p}));
    const auto rollouts =
        env.rollout_group(policy, reference, prompt, cfg.group_size, rng::derive_seed(seed, {kRolloutStream, step, p}));
    std::vector<Trajectory> scored;
    scored.reserve(rollouts.size());
    for (const auto& ro : rollouts) {
      scored.push_back(ro.trajectory.with_step_scores(scoring::score_trajectory(scorer, ro.trajectory)));
    }
    PromptGroup group(prompt.id, std::move(scored));
    auto adv = advantage::final_advantage(group, pipeline);
    if (adv.n_incorrect > 0) {
      offset_sum += adv.mu_incorrect;
      ++offset_groups;
    }
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
      batch.samples.push_back({rollouts[i].path, rollouts[i].trajectory.logprob_ref(), adv.members[i].final});
    }
    batch.groups.push_back(std::move(group));
    batch.advantages.push_back(std::move(adv));
  }
  batch.centering_offset = offset_groups ? offset_sum / static_cast<double>(offset_groups) : 0.0;
  return batch;
}

struct TrainingResult {
  std::vector<MetricsRow> rows;
  SoftmaxPolicy policy;
};

/// Row k describes the policy after k updates: its evaluation and the
/// statistics of a batch sampled from it. Rows run 0..training_steps.
inline TrainingResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, AblationMode mode) {
  cfg.validate();
  const auto env = make_env(cfg);
  const auto scorer = make_scorer(cfg, env);
  const auto pipeline = ablation_mode(cfg.shaping, mode);
  const grpo::ClipBounds bounds{cfg.shaping.clip_lo, cfg.shaping.clip_hi};
  const auto eval_prompts = evaluation_prompts(env, seed, cfg.eval_set_size);

  SoftmaxPolicy policy = env.make_policy();
  SoftmaxPolicy reference = policy;
  TrainingResult result;
  result.rows.reserve(cfg.training_steps + 1);
  for (std::size_t step = 0; step <= cfg.training_steps; ++step) {
    try {
      const auto batch = sample_batch(cfg, env, *scorer, pipeline, policy, reference, seed, step);
      const auto diag = grpo::diagnostics(policy, batch.samples);
      const auto ev = evaluate(env, policy, eval_prompts, cfg.pass_k_samples,
                               rng::derive_seed(seed, {kEvalSampleStream, step}));
      result.rows.push_back({step, ev.pass_at_1, ev.pass_at_k1, ev.pass_at_k5, ev.pass_at_k10, ev.mean_steps,
                             diag.advantage_mean, diag.advantage_std, diag.mean_token_entropy, ev.fluent_trap_rate,
                             batch.centering_offset});
      if (step == cfg.training_steps) break;
      const auto grad = grpo::loss_gradient(policy, batch.samples, bounds);
      policy = grpo::policy_update(std::move(policy), grad, cfg.learning_rate);
      if (cfg.ref_refresh_interval > 0 && (step + 1) % cfg.ref_refresh_interval == 0) reference = policy;
    } catch (const Error& e) {
      fail(e.code(), "training step " + std::to_string(step) + " (seed " + std::to_string(seed) + ", mode " +
                         std::string(to_string(mode)) + "): " + e.what());
    }
  }
  result.policy = std::move(policy);
  return result;
}

// ---------------------------------------------------------------------------
// Policy snapshots

inline nlohmann::json policy_to_json(const SoftmaxPolicy& policy, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["num_states"] = policy.num_states();
  j["num_actions"] = policy.num_actions();
  j["env_increments"] = cfg.env_increments;
  j["env_target_range"] = {cfg.env_min_target, cfg.env_max_target};
  j["env_horizon_range"] = {cfg.env_min_horizon, cfg.env_max_horizon};
  j["logits"] = std::vector<double>(policy.logits().begin(), policy.logits().end());
  return j;
}

inline void save_policy(const std::string& path, const SoftmaxPolicy& policy, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write policy snapshot '" + path + "'");
  out << policy_to_json(policy, cfg).dump() << '\n';
}

/// Loads a snapshot; the environment fields of `cfg` are overwritten with the
/// snapshot's so that states line up.
inline SoftmaxPolicy load_policy(const std::string& path, ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open policy snapshot '" + path + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    cfg.env_increments = j.at("env_increments").get<std::vector<int>>();
    cfg.env_min_target = j.at("env_target_range").at(0).get<int>();
    cfg.env_max_target = j.at("env_target_range").at(1).get<int>();
    cfg.env_min_horizon = j.at("env_horizon_range").at(0).get<int>();
    cfg.env_max_horizon = j.at("env_horizon_range").at(1).get<int>();
    SoftmaxPolicy policy(j.at("num_states").get<std::size_t>(), j.at("num_actions").get<std::size_t>());
    const auto logits = j.at("logits").get<std::vector<double>>();
    if (logits.size() != policy.logits().size()) fail(ErrorCode::ParseError, "snapshot logits have the wrong size");
    std::copy(logits.begin(), logits.end(), policy.logits().begin());
    const auto env = make_env(cfg);
    if (env.num_states() != policy.num_states() || env.num_actions() != policy.num_actions()) {
      fail(ErrorCode::ParseError, "snapshot shape does not match its environment");
    }
    return policy;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Ablation

inline constexpr AblationMode kAllModes[] = {AblationMode::Full, AblationMode::NoCoherence, AblationMode::NoCentering,
                                             AblationMode::OutcomeOnly};

struct ModeSummary {
  AblationMode mode = AblationMode::Full;
  std::vector<MetricsRow> final_rows;  // one per seed
  double pass_at_1_mean = 0.0;
  double pass_at_1_std = 0.0;  // across seeds, sample std
  double pass_at_1_se = 0.0;
  double trap_rate_mean = 0.0;
  double trap_rate_std = 0.0;
  double trap_rate_se = 0.0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<ModeSummary> modes;
  // per_seed_rows[mode][seed] -> full metrics trace
  std::map<AblationMode, std::vector<std::vector<MetricsRow>>> traces;

  const ModeSummary& summary(AblationMode m) const {
    for (const auto& s : modes) {
      if (s.mode == m) return s;
    }
    fail(ErrorCode::InvalidConfig, "mode not part of this ablation");
  }
};

namespace detail {

struct MeanStd {
  double mean = 0.0, std = 0.0, se = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    m.se = m.std / std::sqrt(static_cast<double>(xs.size()));
  }
  return m;
}

}  // namespace detail

inline ModeSummary summarize(AblationMode mode, std::vector<MetricsRow> finals) {
  ModeSummary s;
  s.mode = mode;
  std::vector<double> pass, trap;
  for (const auto& r : finals) {
    pass.push_back(r.pass_at_1);
    trap.push_back(r.fluent_trap_rate);
  }
  const auto p = detail::mean_std(pass);
  const auto t = detail::mean_std(trap);
  s.pass_at_1_mean = p.mean;
  s.pass_at_1_std = p.std;
  s.pass_at_1_se = p.se;
  s.trap_rate_mean = t.mean;
  s.trap_rate_std = t.std;
  s.trap_rate_se = t.se;
  s.final_rows = std::move(finals);
  return s;
}

/// Runs `modes` over seeds cfg.seed .. cfg.seed + num_seeds - 1.
inline AblationReport run_ablation(const ExperimentConfig& cfg,
                                   std::span<const AblationMode> modes = std::span<const AblationMode>(kAllModes)) {
  cfg.validate();
  AblationReport report;
  for (std::size_t i = 0; i < cfg.num_seeds; ++i) report.seeds.push_back(cfg.seed + i);
  for (auto mode : modes) {
    std::vector<MetricsRow> finals;
    auto& traces = report.traces[mode];
    for (auto seed : report.seeds) {
      auto res = run_training(cfg, seed, mode);
      finals.push_back(res.rows.back());
      traces.push_back(std::move(res.rows));
    }
    report.modes.push_back(summarize(mode, std::move(finals)));
  }
  return report;
}

/// Per-seed final metrics with deltas against Full (when Full was run).
inline std::string ablation_summary_csv(const AblationReport& report) {
  const ModeSummary* full = nullptr;
  for (const auto& m : report.modes) {
    if (m.mode == AblationMode::Full) full = &m;
  }
  std::string out = "mode,seed,pass_at_1,fluent_trap_rate,mean_steps_per_trajectory,delta_pass_at_1_vs_full,"
                    "delta_fluent_trap_rate_vs_full\n";
  for (const auto& m : report.modes) {
    for (std::size_t i = 0; i < m.final_rows.size(); ++i) {
      const auto& r = m.final_rows[i];
      const double dp = full ? r.pass_at_1 - full->final_rows[i].pass_at_1 : 0.0;
      const double dt = full ? r.fluent_trap_rate - full->final_rows[i].fluent_trap_rate : 0.0;
      out += std::string(to_string(m.mode)) + "," + std::to_string(report.seeds[i]) + "," + format_metric(r.pass_at_1) +
             "," + format_metric(r.fluent_trap_rate) + "," + format_metric(r.mean_steps) + "," + format_metric(dp) +
             "," + format_metric(dt) + "\n";
    }
  }
  for (const auto& m : report.modes) {
    out += std::string(to_string(m.mode)) + ",mean," + format_metric(m.pass_at_1_mean) + "," +
           format_metric(m.trap_rate_mean) + ",,,\n";
    out += std::string(to_string(m.mode)) + ",std," + format_metric(m.pass_at_1_std) + "," +
           format_metric(m.trap_rate_std) + ",,,\n";
  }
  return out;
}

}  // namespace progrs::harness
