// Command-line front end: score, advantage, train, ablate, verify-prm, eval.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 internal invariant
// violation.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "progrs/advantage.hpp"
#include "progrs/harness/config.hpp"
#include "progrs/harness/experiment.hpp"
#include "progrs/harness/metrics.hpp"
#include "progrs/harness/trajectory_io.hpp"
#include "progrs/step_scoring.hpp"

namespace fs = std::filesystem;
using namespace progrs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
};

harness::ExperimentConfig resolve_config(const CommonFlags& f) {
  harness::ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = harness::load_config(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.mode.empty()) harness::set_config_value(cfg, "mode", f.mode);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, CommonFlags& f, bool with_mode) {
  app->add_option("--config", f.config_path, "Experiment config file (key = value lines)");
  app->add_option("--seed", f.seed, "Base random seed");
  app->add_option("--out", f.out, "Output path");
  if (with_mode) app->add_option("--mode", f.mode, "full | no-coherence | no-centering | outcome-only");
}

// Writes to `path`, or stdout when empty.
template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
  fn(out);
  if (!out) fail(ErrorCode::IoError, "write failed for '" + path + "'");
}

std::string run_header(const harness::ExperimentConfig& cfg) {
  return "# log-ratio clamp = +/-" + harness::detail::format_double(grpo::kLogRatioClamp) + "\n" + cfg.to_text();
}

int cmd_score(const CommonFlags& f, const std::string& in, const std::string& scorer_kind) {
  auto cfg = resolve_config(f);
  if (!scorer_kind.empty()) harness::set_config_value(cfg, "scorer", scorer_kind);
  cfg.validate();
  const auto env = harness::make_env(cfg);
  const auto scorer = harness::make_scorer(cfg, env);
  const auto groups = harness::load_trajectories(in);
  with_output(f.out, [&](std::ostream& out) {
    for (const auto& g : groups) {
      for (const auto& t : g.members()) {
        const auto scored = t.with_step_scores(scoring::score_trajectory(*scorer, t));
        auto j = harness::to_json(scored);
        j["s_prm"] = coherence::multi_scale_score(*scored.step_scores(), cfg.shaping);
        out << j.dump() << '\n';
      }
    }
  });
  return kExitOk;
}

int cmd_advantage(const CommonFlags& f, const std::string& in, const std::string& scorer_kind) {
  auto cfg = resolve_config(f);
  if (!scorer_kind.empty()) harness::set_config_value(cfg, "scorer", scorer_kind);
  cfg.validate();
  const auto groups = harness::load_trajectories(in);
  const auto pipeline = ablation_mode(cfg.shaping, cfg.mode);
  std::shared_ptr<const scoring::StepScorer> scorer;
  if (!scorer_kind.empty()) scorer = harness::make_scorer(cfg, harness::make_env(cfg));
  with_output(f.out, [&](std::ostream& out) {
    for (const auto& g : groups) {
      const auto adv = scorer ? advantage::final_advantage(g, pipeline,
                                                           [&](const Trajectory& t) {
                                                             return scoring::score_trajectory(*scorer, t);
                                                           })
                              : advantage::final_advantage(g, pipeline);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const auto& b = adv.members[i];
        nlohmann::json j;
        j["prompt_id"] = g.prompt_id();
        j["member"] = i;
        j["outcome"] = g[i].outcome();
        j["outcome_advantage"] = b.outcome_advantage;
        j["raw_process"] = b.raw_process;
        j["centered_process"] = b.centered_process;
        j["process_bonus"] = b.process_bonus;
        j["final"] = b.final;
        j["mu_incorrect"] = adv.mu_incorrect;
        j["lambda_prm"] = pipeline.config.lambda_prm;
        j["mode"] = std::string(to_string(cfg.mode));
        out << j.dump() << '\n';
      }
    }
  });
  return kExitOk;
}

int cmd_train(const CommonFlags& f) {
  auto cfg = resolve_config(f);
  const fs::path dir = f.out.empty() ? fs::path(cfg.output_dir) : fs::path(f.out);
  fs::create_directories(dir);
  const auto result = harness::run_training(cfg, cfg.seed, cfg.mode);
  harness::emit_metrics(result.rows, (dir / "metrics.csv").string());
  harness::save_policy((dir / "policy.json").string(), result.policy, cfg);
  with_output((dir / "config.txt").string(), [&](std::ostream& out) { out << run_header(cfg); });
  const auto& last = result.rows.back();
  std::cout << "mode=" << to_string(cfg.mode) << " seed=" << cfg.seed << " steps=" << cfg.training_steps
            << " lambda_prm=" << cfg.shaping.lambda_prm << " final pass@1=" << last.pass_at_1
            << " fluent_trap_rate=" << last.fluent_trap_rate << "\n";
  return kExitOk;
}

int cmd_ablate(const CommonFlags& f) {
  auto cfg = resolve_config(f);
  const fs::path dir = f.out.empty() ? fs::path(cfg.output_dir) : fs::path(f.out);
  const auto report = harness::run_ablation(cfg);
  for (const auto& [mode, traces] : report.traces) {
    const fs::path mode_dir = dir / std::string(to_string(mode));
    fs::create_directories(mode_dir);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      harness::emit_metrics(traces[i], (mode_dir / ("seed_" + std::to_string(report.seeds[i]) + ".csv")).string());
    }
  }
  const auto summary = harness::ablation_summary_csv(report);
  with_output((dir / "summary.csv").string(), [&](std::ostream& out) { out << summary; });
  with_output((dir / "config.txt").string(), [&](std::ostream& out) { out << run_header(cfg); });
  std::cout << "lambda_prm=" << cfg.shaping.lambda_prm << " scorer=" << scoring::to_string(cfg.scorer)
            << " seeds=" << cfg.num_seeds << " steps=" << cfg.training_steps << "\n";
  for (const auto& m : report.modes) {
    std::cout << to_string(m.mode) << ": pass@1 " << m.pass_at_1_mean << " +/- " << m.pass_at_1_std
              << " (std), fluent_trap_rate " << m.trap_rate_mean << " +/- " << m.trap_rate_se << " (se)\n";
  }
  return kExitOk;
}

int cmd_verify_prm(const CommonFlags& f, const std::string& scorer_kind, std::size_t n_traj, std::size_t n_perturb) {
  auto cfg = resolve_config(f);
  if (!scorer_kind.empty()) harness::set_config_value(cfg, "scorer", scorer_kind);
  cfg.validate();
  const auto env = harness::make_env(cfg);
  const auto scorer = harness::make_scorer(cfg, env);
  const auto uniform = env.make_policy();
  std::vector<scoring::CausalityCase> cases;
  for (std::size_t i = 0; i < n_traj; ++i) {
    const auto prompt = env.sample_prompt(rng::derive_seed(cfg.seed, {101, i}));
    rng::Engine eng(rng::derive_seed(cfg.seed, {102, i}));
    const auto ro = env.rollout(uniform, uniform, prompt, &eng);
    cases.push_back({prompt.id, ro.trajectory.steps()});
  }
  std::vector<std::string> vocab;
  for (ActionIndex a = 0; a < env.num_actions(); ++a) vocab.push_back(env.action_label(a));
  const auto report = scoring::verify_prefix_causality(*scorer, cases, n_perturb, vocab, cfg.seed);
  nlohmann::json j;
  j["scorer"] = scorer->name();
  j["trajectories"] = n_traj;
  j["perturbations"] = n_perturb;
  auto summary = [](const scoring::DifferenceSummary& s) {
    return nlohmann::json{{"comparisons", s.comparisons}, {"mean_abs_diff", s.mean_abs}, {"std_abs_diff", s.std_abs},
                          {"max_abs_diff", s.max_abs}};
  };
  j["test1_prefix_vs_full"] = summary(report.prefix_vs_full);
  j["test2_suffix_perturbation"] = summary(report.suffix_perturbation);
  j["violation"] = report.violation;
  with_output(f.out, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
  return report.violation ? kExitInternal : kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::string& policy_path) {
  auto cfg = resolve_config(f);
  const auto policy = harness::load_policy(policy_path, cfg);
  const auto env = harness::make_env(cfg);
  const auto prompts = harness::evaluation_prompts(env, cfg.seed, cfg.eval_set_size);
  const auto ev = harness::evaluate(env, policy, prompts, cfg.pass_k_samples, rng::derive_seed(cfg.seed, {99}));
  nlohmann::json j{{"eval_set_size", cfg.eval_set_size},
                   {"samples_per_prompt", cfg.pass_k_samples},
                   {"pass_at_1_greedy", ev.pass_at_1},
                   {"pass_at_1", ev.pass_at_k1},
                   {"pass_at_5", ev.pass_at_k5},
                   {"pass_at_10", ev.pass_at_k10},
                   {"mean_steps_per_trajectory", ev.mean_steps},
                   {"fluent_trap_rate", ev.fluent_trap_rate}};
  with_output(f.out, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Outcome-conditioned process-reward shaping for group policy optimization"};
  app.require_subcommand(1);

  CommonFlags score_f, adv_f, train_f, ablate_f, verify_f, eval_f;
  std::string score_in, score_scorer, adv_in, adv_scorer, verify_scorer, eval_policy;
  std::size_t verify_n = 100, verify_k = 5;

  auto* score = app.add_subcommand("score", "Attach step scores and S_PRM to trajectory JSONL");
  add_common(score, score_f, false);
  score->add_option("--in", score_in, "Trajectory JSONL")->required();
  score->add_option("--scorer", score_scorer, "oracle | miscalibrated | noisy | constant | file");

  auto* adv = app.add_subcommand("advantage", "Grouped trajectory JSONL to advantage breakdown JSONL");
  add_common(adv, adv_f, true);
  adv->add_option("--in", adv_in, "Trajectory JSONL")->required();
  adv->add_option("--scorer", adv_scorer, "Scorer for members without step_scores");

  auto* train = app.add_subcommand("train", "Run one training job");
  add_common(train, train_f, true);

  auto* ablate = app.add_subcommand("ablate", "Run all ablation modes over the configured seeds");
  add_common(ablate, ablate_f, false);

  auto* verify = app.add_subcommand("verify-prm", "Prefix-causality checks on a scorer");
  add_common(verify, verify_f, false);
  verify->add_option("--scorer", verify_scorer, "oracle | miscalibrated | noisy | constant | file");
  verify->add_option("--trajectories", verify_n, "Number of sampled trajectories");
  verify->add_option("--perturbations", verify_k, "Suffix rewrites per step");

  auto* eval = app.add_subcommand("eval", "Pass@K of a policy snapshot");
  add_common(eval, eval_f, false);
  eval->add_option("--policy", eval_policy, "Policy snapshot JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*score) return cmd_score(score_f, score_in, score_scorer);
    if (*adv) return cmd_advantage(adv_f, adv_in, adv_scorer);
    if (*train) return cmd_train(train_f);
    if (*ablate) return cmd_ablate(ablate_f);
    if (*verify) return cmd_verify_prm(verify_f, verify_scorer, verify_n, verify_k);
    if (*eval) return cmd_eval(eval_f, eval_policy);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.category()) {
      case ErrorCategory::Config: return kExitConfig;
      case ErrorCategory::Data: return kExitData;
      case ErrorCategory::Internal: return kExitInternal;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
