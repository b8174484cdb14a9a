#pragma once

// Sliding-window samples. A sample is only an index pair (target series,
// label timestamp); its window and label are read from the panel on access,
// so rewrites of the panel are visible to every later read.

#include <cstddef>
#include <set>
#include <span>
#include <vector>

#include "stts/panel.hpp"

namespace stts {

struct WindowSample {
  std::size_t target = 0;
  std::size_t timestamp = 0;  // label timestamp; the window covers [timestamp - P, timestamp)

  auto operator<=>(const WindowSample&) const = default;
};

// N × P: the target's window in row 0, the other series after it in index order.
inline Matrix window_matrix(const SeriesPanel& panel, const WindowSample& s, std::size_t P) {
  const auto n = static_cast<Eigen::Index>(panel.n_series());
  const auto start = static_cast<Eigen::Index>(s.timestamp - P);
  const auto p = static_cast<Eigen::Index>(P);
  Matrix out(n, p);
  out.row(0) = panel.values.row(static_cast<Eigen::Index>(s.target)).segment(start, p);
  Eigen::Index r = 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i == static_cast<Eigen::Index>(s.target)) continue;
    out.row(r++) = panel.values.row(i).segment(start, p);
  }
  return out;
}

// M × P block of the given series (row order follows `series`).
inline Matrix window_block(const SeriesPanel& panel, const WindowSample& s, std::size_t P,
                           std::span<const std::size_t> series) {
  const auto start = static_cast<Eigen::Index>(s.timestamp - P);
  const auto p = static_cast<Eigen::Index>(P);
  Matrix out(static_cast<Eigen::Index>(series.size()), p);
  for (std::size_t k = 0; k < series.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) =
        panel.values.row(static_cast<Eigen::Index>(series[k])).segment(start, p);
  }
  return out;
}

inline double label(const SeriesPanel& panel, const WindowSample& s) {
  return panel.at(s.target, s.timestamp);
}

struct WindowSet {
  std::vector<WindowSample> train;
  std::vector<WindowSample> valid;
  std::vector<WindowSample> test;
};

// One sample per (series, timestamp) with timestamp >= P inside each split range.
inline WindowSet make_windows(const SeriesPanel& panel, const SplitSpec& split, std::size_t P) {
  require(P >= 1, ErrorKind::invalid_argument, "window length must be positive");
  require(P < split.train_end, ErrorKind::invalid_argument, "window length must be below train_end");
  // Empty validation/test ranges are allowed here; training requires the strict split.
  require(split.train_end <= split.valid_end && split.valid_end <= split.test_end &&
              split.test_end <= panel.n_timestamps(),
          ErrorKind::invalid_argument, "split boundaries must be ordered and within T");
  WindowSet set;
  auto fill = [&](std::vector<WindowSample>& out, std::size_t from, std::size_t to) {
    from = std::max(from, P);
    if (to <= from) return;
    out.reserve(panel.n_series() * (to - from));
    for (std::size_t t = from; t < to; ++t) {
      for (std::size_t i = 0; i < panel.n_series(); ++i) out.push_back({i, t});
    }
  };
  fill(set.train, 0, split.train_end);
  fill(set.valid, split.train_end, split.valid_end);
  fill(set.test, split.valid_end, split.test_end);
  return set;
}

// Training samples minus those whose label position has been excluded
// (the "remove" fill strategy).
inline std::vector<WindowSample> active_samples(std::span<const WindowSample> samples,
                                                const std::set<Position>& excluded) {
  std::vector<WindowSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!excluded.contains(Position{s.target, s.timestamp})) out.push_back(s);
  }
  return out;
}

}  // namespace stts
