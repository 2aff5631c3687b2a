#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "progrs/advantage.hpp"
#include "progrs/core_model.hpp"
#include "progrs/step_scoring.hpp"

namespace progrs::harness {

/// Everything a training or ablation run needs. Defaults reproduce the
/// acceptance configuration (K=4, 500 steps, 10 seeds).
struct ExperimentConfig {
  ShapingConfig shaping;

  scoring::ScorerKind scorer = scoring::ScorerKind::OracleDP;
  scoring::ScorerKind noisy_base = scoring::ScorerKind::OracleDP;
  double noise_delta = 0.1;
  std::uint64_t noise_seed = 17;
  scoring::MiscalibrationParams miscalibration;
  QuantileTriple constant_score{0.3, 0.5, 0.7};
  std::string scorer_file;
  std::size_t oracle_state_cap = 1'000'000;

  AblationMode mode = AblationMode::Full;
  std::size_t group_size = 4;
  std::size_t prompts_per_step = 8;
  std::size_t training_steps = 500;
  double learning_rate = 30.0;  // the loss averages over the whole batch, so per-logit steps are small
  std::size_t ref_refresh_interval = 0;  // 0: reference stays the initial policy
  std::size_t eval_set_size = 64;
  std::size_t pass_k_samples = 10;
  std::uint64_t seed = 0;
  std::size_t num_seeds = 10;
  std::string output_dir = "out";

  std::vector<int> env_increments{1, 2, 3};
  int env_min_target = 1;
  int env_max_target = 12;
  int env_min_horizon = 2;
  int env_max_horizon = 8;

  void validate() const {
    shaping.validate();
    auto bad = [](const std::string& what) { fail(ErrorCode::InvalidConfig, what); };
    if (group_size < 1) bad("group_size must be >= 1");
    if (prompts_per_step < 1) bad("prompts_per_step must be >= 1");
    if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) bad("learning_rate must be positive");
    if (eval_set_size < 1) bad("eval_set_size must be >= 1");
    if (pass_k_samples < 10) bad("pass_k_samples must be >= 10 to estimate pass@10");
    if (num_seeds < 1) bad("num_seeds must be >= 1");
    if (!(noise_delta >= 0.0 && noise_delta <= 1.0)) bad("noise_delta must lie in [0,1]");
    if (noisy_base == scoring::ScorerKind::Noisy) bad("noisy_base cannot itself be noisy");
    if (scorer == scoring::ScorerKind::FromFile && scorer_file.empty()) bad("scorer=file requires scorer_file");
    if (!(miscalibration.trap_floor >= 0.0 && miscalibration.trap_floor <= 1.0)) bad("trap_floor must lie in [0,1]");
    if (!(miscalibration.damping >= 0.0 && miscalibration.damping <= 1.0)) bad("damping must lie in [0,1]");
    if (!(miscalibration.band >= 0.0 && miscalibration.band <= 1.0)) bad("band must lie in [0,1]");
    if (!scoring::detail::well_formed(constant_score)) bad("constant score must be an ordered triple in [0,1]");
  }

  bool operator==(const ExperimentConfig& o) const { return to_text() == o.to_text(); }

  std::string to_text() const;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(ErrorCode::InvalidConfig, key + ": not a number: '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    fail(ErrorCode::InvalidConfig, key + ": not a nonnegative integer: '" + v + "'");
  }
  return out;
}

inline int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(ErrorCode::InvalidConfig, key + ": not an integer: '" + v + "'");
  return out;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) fail(ErrorCode::InvalidConfig, key + ": empty list");
  return out;
}

inline scoring::ScorerKind parse_kind(const std::string& key, const std::string& v) {
  auto k = scoring::parse_scorer_kind(v);
  if (!k) fail(ErrorCode::InvalidConfig, key + ": unknown scorer '" + v + "'");
  return *k;
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

/// Every documented key, in file order.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&t](std::string key, auto get, auto set) { t.push_back({std::move(key), Field{get, set}}); };
    auto add_double = [&add](std::string key, auto member_ref) {
      add(
          key, [member_ref](const C& c) { return format_double(member_ref(const_cast<C&>(c))); },
          [member_ref](C& c, const std::string& k, const std::string& v) { member_ref(c) = parse_double(k, v); });
    };
    auto add_size = [&add](std::string key, auto member_ref) {
      add(
          key, [member_ref](const C& c) { return std::to_string(member_ref(const_cast<C&>(c))); },
          [member_ref](C& c, const std::string& k, const std::string& v) {
            member_ref(c) = static_cast<std::remove_reference_t<decltype(member_ref(c))>>(parse_uint(k, v));
          });
    };
    auto add_int = [&add](std::string key, auto member_ref) {
      add(
          key, [member_ref](const C& c) { return std::to_string(member_ref(const_cast<C&>(c))); },
          [member_ref](C& c, const std::string& k, const std::string& v) { member_ref(c) = parse_int(k, v); });
    };

    add(
        "window_sizes", [](const C& c) { return join(c.shaping.window_sizes); },
        [](C& c, const std::string& k, const std::string& v) { c.shaping.window_sizes = parse_int_list(k, v); });
    add_double("lambda_var", [](C& c) -> double& { return c.shaping.lambda_var; });
    add_double("alpha_coh", [](C& c) -> double& { return c.shaping.alpha_coh; });
    add_double("lambda_prm", [](C& c) -> double& { return c.shaping.lambda_prm; });
    add_double("epsilon_outcome", [](C& c) -> double& { return c.shaping.epsilon_outcome; });
    add_double("epsilon_coherence", [](C& c) -> double& { return c.shaping.epsilon_coherence; });
    add_double("clip_lo", [](C& c) -> double& { return c.shaping.clip_lo; });
    add_double("clip_hi", [](C& c) -> double& { return c.shaping.clip_hi; });
    add(
        "scorer", [](const C& c) { return std::string(scoring::to_string(c.scorer)); },
        [](C& c, const std::string& k, const std::string& v) { c.scorer = parse_kind(k, v); });
    add(
        "noisy_base", [](const C& c) { return std::string(scoring::to_string(c.noisy_base)); },
        [](C& c, const std::string& k, const std::string& v) { c.noisy_base = parse_kind(k, v); });
    add_double("noise_delta", [](C& c) -> double& { return c.noise_delta; });
    add_size("noise_seed", [](C& c) -> std::uint64_t& { return c.noise_seed; });
    add_double("trap_floor", [](C& c) -> double& { return c.miscalibration.trap_floor; });
    add_double("damping", [](C& c) -> double& { return c.miscalibration.damping; });
    add_double("band", [](C& c) -> double& { return c.miscalibration.band; });
    add_double("constant_lo", [](C& c) -> double& { return c.constant_score.lo; });
    add_double("constant_median", [](C& c) -> double& { return c.constant_score.median; });
    add_double("constant_hi", [](C& c) -> double& { return c.constant_score.hi; });
    add(
        "scorer_file", [](const C& c) { return c.scorer_file; },
        [](C& c, const std::string&, const std::string& v) { c.scorer_file = v; });
    add_size("oracle_state_cap", [](C& c) -> std::size_t& { return c.oracle_state_cap; });
    add(
        "mode", [](const C& c) { return std::string(to_string(c.mode)); },
        [](C& c, const std::string& k, const std::string& v) {
          auto m = parse_ablation_mode(v);
          if (!m) fail(ErrorCode::InvalidConfig, k + ": unknown mode '" + v + "'");
          c.mode = *m;
        });
    add_size("group_size", [](C& c) -> std::size_t& { return c.group_size; });
    add_size("prompts_per_step", [](C& c) -> std::size_t& { return c.prompts_per_step; });
    add_size("training_steps", [](C& c) -> std::size_t& { return c.training_steps; });
    add_double("learning_rate", [](C& c) -> double& { return c.learning_rate; });
    add_size("ref_refresh_interval", [](C& c) -> std::size_t& { return c.ref_refresh_interval; });
    add_size("eval_set_size", [](C& c) -> std::size_t& { return c.eval_set_size; });
    add_size("pass_k_samples", [](C& c) -> std::size_t& { return c.pass_k_samples; });
    add_size("seed", [](C& c) -> std::uint64_t& { return c.seed; });
    add_size("num_seeds", [](C& c) -> std::size_t& { return c.num_seeds; });
    add(
        "output_dir", [](const C& c) { return c.output_dir; },
        [](C& c, const std::string&, const std::string& v) { c.output_dir = v; });
    add(
        "env_increments", [](const C& c) { return join(c.env_increments); },
        [](C& c, const std::string& k, const std::string& v) { c.env_increments = parse_int_list(k, v); });
    add_int("env_min_target", [](C& c) -> int& { return c.env_min_target; });
    add_int("env_max_target", [](C& c) -> int& { return c.env_max_target; });
    add_int("env_min_horizon", [](C& c) -> int& { return c.env_min_horizon; });
    add_int("env_max_horizon", [](C& c) -> int& { return c.env_max_horizon; });
    return t;
  }();
  return table;
}

}  // namespace detail

inline std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

/// Applies one `key = value` assignment. Unknown keys are an error.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "epsilon") {
    // Shorthand for both epsilons.
    const double e = detail::parse_double(key, value);
    cfg.shaping.epsilon_outcome = e;
    cfg.shaping.epsilon_coherence = e;
    return;
  }
  for (const auto& [k, field] : detail::fields()) {
    if (k == key) {
      field.set(cfg, key, value);
      return;
    }
  }
  fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

/// Flat `key = value` text; '#' starts a comment. Later assignments win.
inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
  std::stringstream ss{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::InvalidConfig, "line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(trimmed).substr(0, eq));
    const std::string value = detail::trim(std::string_view(trimmed).substr(eq + 1));
    try {
      set_config_value(base, key, value);
    } catch (const Error& e) {
      fail(ErrorCode::InvalidConfig, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace progrs::harness
