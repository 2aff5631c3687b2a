#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "progrs/core_model.hpp"

namespace progrs::coherence {

/// Half-open, zero-based index range [begin, end) of one window.
struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const Window&) const = default;
};

struct WindowStats {
  std::size_t window_index = 1;  // one-based
  Window members;
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
};

/// Contiguous non-overlapping windows of nominal size w; the last one may be short.
inline std::vector<Window> partition_windows(std::size_t length, std::size_t w) {
  if (length == 0 || w == 0) fail(ErrorCode::InvalidConfig, "partition_windows needs T >= 1 and w >= 1");
  std::vector<Window> out;
  out.reserve((length + w - 1) / w);
  for (std::size_t begin = 0; begin < length; begin += w) {
    out.push_back({begin, std::min(begin + w, length)});
  }
  return out;
}

inline std::vector<WindowStats> window_stats(std::span<const double> scores, std::span<const Window> windows) {
  std::vector<WindowStats> out;
  out.reserve(windows.size());
  for (std::size_t j = 0; j < windows.size(); ++j) {
    const Window& win = windows[j];
    if (win.size() == 0 || win.end > scores.size()) fail(ErrorCode::InvalidConfig, "window out of range");
    const auto values = scores.subspan(win.begin, win.size());
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mu = sum / n;
    double sigma = 0.0;
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - mu) * (v - mu);
      sigma = std::sqrt(ss / n);
    }
    out.push_back({j + 1, win, mu, sigma});
  }
  return out;
}

/// mu * exp(-lambda_var * sigma / (mu + eps)). The exponent is clamped to
/// [-50, 0]; for valid inputs it is never positive.
inline double coherence_score(const WindowStats& s, double lambda_var, double epsilon) {
  const double exponent = std::clamp(-lambda_var * s.sigma / (s.mu + epsilon), -50.0, 0.0);
  return s.mu * std::exp(exponent);
}

inline double blended_window_score(const WindowStats& s, const ShapingConfig& cfg) {
  const double coh = coherence_score(s, cfg.lambda_var, cfg.epsilon_coherence);
  return cfg.alpha_coh * coh + (1.0 - cfg.alpha_coh) * s.mu;
}

inline double trajectory_score_at_scale(std::span<const double> scores, std::size_t w, const ShapingConfig& cfg) {
  const auto windows = partition_windows(scores.size(), w);
  const auto stats = window_stats(scores, windows);
  double total = 0.0;
  for (const auto& s : stats) total += blended_window_score(s, cfg);
  return total / static_cast<double>(stats.size());
}

/// Equal-weight average of the per-scale scores over cfg.window_sizes.
inline double multi_scale_score(std::span<const double> scores, const ShapingConfig& cfg) {
  if (cfg.window_sizes.empty()) fail(ErrorCode::InvalidConfig, "window_sizes must be nonempty");
  double total = 0.0;
  for (int w : cfg.window_sizes) {
    if (w < 1) fail(ErrorCode::InvalidConfig, "window sizes must be >= 1");
    total += trajectory_score_at_scale(scores, static_cast<std::size_t>(w), cfg);
  }
  return total / static_cast<double>(cfg.window_sizes.size());
}

inline double multi_scale_score(const StepScoreSeries& series, const ShapingConfig& cfg) {
  return multi_scale_score(std::span<const double>(series.median()), cfg);
}

}  // namespace progrs::coherence
