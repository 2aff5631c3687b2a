#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "progrs/error.hpp"

namespace progrs::harness {

/// Unbiased pass@k from n samples with c correct: 1 - C(n-c, k) / C(n, k),
/// evaluated as a running product to stay in floating point range.
inline double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (k == 0 || k > n) fail(ErrorCode::InvalidConfig, "pass@k needs 1 <= k <= n");
  if (c > n) fail(ErrorCode::InvalidConfig, "pass@k: more correct samples than samples");
  if (n - c < k) return 1.0;
  double miss = 1.0;
  for (std::size_t i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

/// One row per training step. `mean_steps` is steps per trajectory, the
/// desk-scale analogue of generated tokens.
struct MetricsRow {
  std::size_t step = 0;
  double pass_at_1 = 0.0;  // greedy decode on the evaluation prompts
  double pass_at_k1 = 0.0;  // sampled, unbiased estimator
  double pass_at_k5 = 0.0;
  double pass_at_k10 = 0.0;
  double mean_steps = 0.0;
  double advantage_mean = 0.0;
  double advantage_std = 0.0;
  double entropy = 0.0;
  double fluent_trap_rate = 0.0;
  double centering_offset = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr std::array<std::string_view, 11> kMetricsColumns = {
    "step",          "pass_at_1",      "pass_at_k1", "pass_at_k5",       "pass_at_k10",     "mean_steps_per_trajectory",
    "advantage_mean", "advantage_std", "entropy",    "fluent_trap_rate", "centering_offset"};

inline std::string format_metric(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out;
  for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) {
    if (i) out += ',';
    out += kMetricsColumns[i];
  }
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    for (double v : {r.pass_at_1, r.pass_at_k1, r.pass_at_k5, r.pass_at_k10, r.mean_steps, r.advantage_mean,
                     r.advantage_std, r.entropy, r.fluent_trap_rate, r.centering_offset}) {
      out += ',';
      out += format_metric(v);
    }
    out += '\n';
  }
  return out;
}

inline void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  if (rows.empty()) fail(ErrorCode::EmptyBatch, "emit_metrics needs at least one row");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write metrics file '" + path + "'");
  out << metrics_csv(rows);
  if (!out) fail(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open metrics file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, path + ": missing header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != kMetricsColumns.size()) {
      fail(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": wrong column count");
    }
    try {
      MetricsRow r;
      r.step = std::stoull(cells[0]);
      double* fields[] = {&r.pass_at_1, &r.pass_at_k1, &r.pass_at_k5, &r.pass_at_k10, &r.mean_steps,
                          &r.advantage_mean, &r.advantage_std, &r.entropy, &r.fluent_trap_rate,
                          &r.centering_offset};
      for (std::size_t i = 0; i < 10; ++i) *fields[i] = std::stod(cells[i + 1]);
      rows.push_back(r);
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

}  // namespace progrs::harness
