#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "progrs/core_model.hpp"

namespace progrs::harness {

// Trajectory JSONL: one object per line with
//   prompt_id (string), steps (array of strings), outcome (0 or 1),
//   step_scores (optional {lo, median, hi}), logprob_policy, logprob_ref.
// Lines may carry extra fields (e.g. "s_prm" written by `score`); they are
// ignored on read.

inline nlohmann::json to_json(const Trajectory& t) {
  nlohmann::json j;
  j["prompt_id"] = t.prompt_id();
  j["steps"] = t.steps();
  j["outcome"] = t.outcome();
  if (const auto& s = t.step_scores()) {
    nlohmann::json sj;
    if (s->lo()) sj["lo"] = *s->lo();
    sj["median"] = s->median();
    if (s->hi()) sj["hi"] = *s->hi();
    j["step_scores"] = std::move(sj);
  }
  j["logprob_policy"] = t.logprob_policy();
  j["logprob_ref"] = t.logprob_ref();
  return j;
}

/// Parses one line into an unvalidated draft. Schema violations throw
/// ParseError; invariant violations are left to validation.
inline TrajectoryDraft parse_trajectory_line(const std::string& line, std::size_t lineno) {
  auto parse_error = [lineno](const std::string& what) {
    fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + what);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    parse_error(e.what());
  }
  if (!j.is_object()) parse_error("expected a JSON object");
  TrajectoryDraft d;
  try {
    const auto& pid = j.at("prompt_id");
    if (!pid.is_string()) parse_error("prompt_id must be a string");
    d.prompt_id = pid.get<std::string>();
    const auto& steps = j.at("steps");
    if (!steps.is_array()) parse_error("steps must be an array");
    for (const auto& s : steps) {
      if (!s.is_string()) parse_error("steps must contain strings");
      d.steps.push_back(s.get<std::string>());
    }
    const auto& outcome = j.at("outcome");
    if (!outcome.is_number()) parse_error("outcome must be a number");
    d.outcome = outcome.get<double>();
    for (const char* key : {"logprob_policy", "logprob_ref"}) {
      const auto& v = j.at(key);
      if (!v.is_number()) parse_error(std::string(key) + " must be a number");
    }
    d.logprob_policy = j.at("logprob_policy").get<double>();
    d.logprob_ref = j.at("logprob_ref").get<double>();
    if (j.contains("step_scores") && !j.at("step_scores").is_null()) {
      const auto& sj = j.at("step_scores");
      if (!sj.is_object()) parse_error("step_scores must be an object");
      auto numbers = [&](const char* key) -> std::optional<std::vector<double>> {
        if (!sj.contains(key)) return std::nullopt;
        const auto& arr = sj.at(key);
        if (!arr.is_array()) parse_error(std::string("step_scores.") + key + " must be an array");
        std::vector<double> out;
        for (const auto& v : arr) {
          if (!v.is_number()) parse_error(std::string("step_scores.") + key + " must contain numbers");
          out.push_back(v.get<double>());
        }
        return out;
      };
      auto median = numbers("median");
      if (!median) parse_error("step_scores.median is required");
      try {
        d.step_scores = StepScoreSeries(std::move(*median), numbers("lo"), numbers("hi"));
      } catch (const Error& e) {
        fail(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    parse_error(e.what());
  }
  return d;
}

/// Groups are returned in order of first appearance; members keep file order.
inline std::vector<PromptGroup> read_trajectories(std::istream& in) {
  std::vector<GroupDraft> drafts;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto d = parse_trajectory_line(line, lineno);
    auto [it, inserted] = index.try_emplace(d.prompt_id, drafts.size());
    if (inserted) drafts.push_back({d.prompt_id, {}});
    drafts[it->second].members.push_back(std::move(d));
  }
  std::vector<PromptGroup> groups;
  groups.reserve(drafts.size());
  for (const auto& g : drafts) groups.push_back(validate_group(g));
  return groups;
}

inline std::vector<PromptGroup> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open trajectory file '" + path + "'");
  return read_trajectories(in);
}

inline void write_trajectories(std::ostream& out, const std::vector<PromptGroup>& groups) {
  for (const auto& g : groups) {
    for (const auto& t : g.members()) out << to_json(t).dump() << '\n';
  }
}

inline void export_trajectories(const std::string& path, const std::vector<PromptGroup>& groups) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write trajectory file '" + path + "'");
  write_trajectories(out, groups);
  if (!out) fail(ErrorCode::IoError, "write failed for '" + path + "'");
}

}  // namespace progrs::harness
