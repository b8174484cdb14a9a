#pragma once

// Two-stage cleaning baselines: flag outliers once with a simple statistic,
// fill them, then train on the cleaned panel.

#include <cmath>
#include <vector>

#include "stts/fill.hpp"

namespace stts {

struct CleanResult {
  SeriesPanel panel;
  std::vector<Position> positions;
  std::vector<FillRecord> fills;
};

struct CleanOptions {
  std::size_t limit = 0;  // only [0, limit) is inspected and rewritten; 0 means all of T
  FillStrategy fill = FillStrategy::mean;
  FillParams fill_params;
};

namespace detail {

inline CleanResult apply_fill(const SeriesPanel& panel, std::vector<Position> positions, const CleanOptions& opt,
                              std::size_t limit) {
  CleanResult r{panel, std::move(positions), {}};
  if (!r.positions.empty()) {
    FillParams fp = opt.fill_params;
    fp.limit = limit;
    r.fills = fill_anomalies(r.panel, r.positions, opt.fill, fp);
  }
  return r;
}

inline std::size_t resolve_limit(const SeriesPanel& panel, std::size_t limit) {
  require(limit <= panel.n_timestamps(), ErrorKind::invalid_argument, "cleaning limit beyond T");
  return limit == 0 ? panel.n_timestamps() : limit;
}

}  // namespace detail

// Flags |x - mu| > k * sigma per series with mu, sigma over [0, limit).
inline CleanResult three_sigma_clean(const SeriesPanel& panel, const CleanOptions& opt = {}, double k = 3.0) {
  const std::size_t limit = detail::resolve_limit(panel, opt.limit);
  std::vector<Position> flagged;
  for (std::size_t i = 0; i < panel.n_series(); ++i) {
    const auto row = panel.values.row(static_cast<Eigen::Index>(i)).head(static_cast<Eigen::Index>(limit));
    const double mu = row.mean();
    const double sd = std::sqrt((row.array() - mu).square().mean());
    if (sd <= 0.0) continue;
    for (std::size_t t = 0; t < limit; ++t) {
      if (std::abs(panel.at(i, t) - mu) > k * sd) flagged.push_back({i, t});
    }
  }
  return detail::apply_fill(panel, std::move(flagged), opt, limit);
}

struct EwmaTrace {
  Vector mean;      // m_t
  Vector variance;  // v_t
  Vector residual;  // x_t - m_{t-1} (0 at t = 0)
  std::vector<bool> flagged;
};

// m_t = a x_t + (1-a) m_{t-1},  v_t = a (x_t - m_{t-1})^2 + (1-a) v_{t-1};
// t is flagged when |x_t - m_{t-1}| > k sqrt(v_{t-1}). Starts from m_0 = x_0
// and v_0 = the sample variance of the inspected range.
inline EwmaTrace ewma_trace(const Eigen::Ref<const RowVector>& x, double alpha, double k) {
  require(alpha > 0.0 && alpha <= 1.0, ErrorKind::invalid_argument, "ewma alpha must lie in (0,1]");
  require(k > 0.0, ErrorKind::invalid_argument, "ewma k must be positive");
  const Eigen::Index n = x.size();
  EwmaTrace tr{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), std::vector<bool>(static_cast<std::size_t>(n))};
  if (n == 0) return tr;
  const double mu = x.mean();
  tr.mean(0) = x(0);
  tr.variance(0) = (x.array() - mu).square().mean();
  for (Eigen::Index t = 1; t < n; ++t) {
    const double d = x(t) - tr.mean(t - 1);
    tr.residual(t) = d;
    tr.flagged[static_cast<std::size_t>(t)] = std::abs(d) > k * std::sqrt(tr.variance(t - 1));
    tr.mean(t) = alpha * x(t) + (1.0 - alpha) * tr.mean(t - 1);
    tr.variance(t) = alpha * d * d + (1.0 - alpha) * tr.variance(t - 1);
  }
  return tr;
}

inline CleanResult ewma_clean(const SeriesPanel& panel, double alpha, double k, const CleanOptions& opt = {}) {
  const std::size_t limit = detail::resolve_limit(panel, opt.limit);
  std::vector<Position> flagged;
  for (std::size_t i = 0; i < panel.n_series(); ++i) {
    const RowVector row = panel.values.row(static_cast<Eigen::Index>(i)).head(static_cast<Eigen::Index>(limit));
    const EwmaTrace tr = ewma_trace(row, alpha, k);
    for (std::size_t t = 0; t < limit; ++t) {
      if (tr.flagged[t]) flagged.push_back({i, t});
    }
  }
  return detail::apply_fill(panel, std::move(flagged), opt, limit);
}

}  // namespace stts
