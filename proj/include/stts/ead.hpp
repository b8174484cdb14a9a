#pragma once

// Residual-based anomaly detection over the training range: per-point
// prediction and reconstruction residuals, a blended score, and a
// nonparametric dynamic threshold.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stts/fill.hpp"
#include "stts/model.hpp"
#include "stts/windows.hpp"

namespace stts {

inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

class ResidualLedger {
 public:
  ResidualLedger() = default;
  ResidualLedger(std::size_t n_series, std::size_t n_timestamps, std::size_t train_end)
      : eps_p_(Matrix::Constant(static_cast<Eigen::Index>(n_series), static_cast<Eigen::Index>(n_timestamps), kAbsent)),
        eps_r_(Matrix::Zero(static_cast<Eigen::Index>(n_series), static_cast<Eigen::Index>(n_timestamps))),
        counts_(Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(n_series), static_cast<Eigen::Index>(n_timestamps))),
        train_end_(train_end) {
    require(train_end <= n_timestamps, ErrorKind::invalid_argument, "ledger: train_end beyond T");
  }

  // Adds one sample's residuals. `window` is the target's input window
  // (length P) and `label` its next value.
  void accumulate(const WindowSample& s, double label, const Vector& window, const ModelOutput& out) {
    require(!finalized_, ErrorKind::invalid_argument, "ledger already finalized");
    require(s.timestamp < train_end_, ErrorKind::invalid_argument, "ledger: sample outside the training range");
    require(out.reconstruction.size() == window.size() && s.timestamp >= static_cast<std::size_t>(window.size()),
            ErrorKind::dimension, "ledger: window and reconstruction lengths differ");
    const double ep = std::abs(label - out.prediction);
    require(std::isfinite(ep), ErrorKind::numeric, "non-finite prediction residual");
    const auto i = static_cast<Eigen::Index>(s.target);
    eps_p_(i, static_cast<Eigen::Index>(s.timestamp)) = ep;
    const auto start = static_cast<Eigen::Index>(s.timestamp) - window.size();
    for (Eigen::Index k = 0; k < window.size(); ++k) {
      const double er = std::abs(window(k) - out.reconstruction(k));
      require(std::isfinite(er), ErrorKind::numeric, "non-finite reconstruction residual");
      eps_r_(i, start + k) += er;
      counts_(i, start + k) += 1;
    }
  }

  // Turns reconstruction sums into means; uncovered points become absent.
  void finalize() {
    require(!finalized_, ErrorKind::invalid_argument, "ledger already finalized");
    for (Eigen::Index i = 0; i < eps_r_.rows(); ++i) {
      for (Eigen::Index t = 0; t < eps_r_.cols(); ++t) {
        eps_r_(i, t) = counts_(i, t) > 0 ? eps_r_(i, t) / counts_(i, t) : kAbsent;
      }
    }
    finalized_ = true;
  }

  bool finalized() const { return finalized_; }
  const Matrix& eps_p() const { return eps_p_; }
  const Matrix& eps_r() const { return eps_r_; }
  const Eigen::MatrixXi& counts() const { return counts_; }
  std::size_t train_end() const { return train_end_; }

  // Direct construction from finished residual matrices (NaN = absent).
  static ResidualLedger from_residuals(Matrix eps_p, Matrix eps_r, std::size_t train_end) {
    require(eps_p.rows() == eps_r.rows() && eps_p.cols() == eps_r.cols(), ErrorKind::dimension,
            "ledger: residual matrices differ in shape");
    require(train_end <= static_cast<std::size_t>(eps_p.cols()), ErrorKind::invalid_argument,
            "ledger: train_end beyond T");
    for (Eigen::Index i = 0; i < eps_p.size(); ++i) {
      require(std::isnan(eps_p.data()[i]) || eps_p.data()[i] >= 0.0, ErrorKind::numeric, "negative residual");
      require(std::isnan(eps_r.data()[i]) || eps_r.data()[i] >= 0.0, ErrorKind::numeric, "negative residual");
    }
    ResidualLedger l;
    l.counts_ = (eps_r.array().isNaN()).select(0, Eigen::MatrixXi::Ones(eps_r.rows(), eps_r.cols()));
    l.eps_p_ = std::move(eps_p);
    l.eps_r_ = std::move(eps_r);
    l.train_end_ = train_end;
    l.finalized_ = true;
    return l;
  }

 private:
  Matrix eps_p_, eps_r_;
  Eigen::MatrixXi counts_;
  std::size_t train_end_ = 0;
  bool finalized_ = false;
};

// s = delta * eps_p + (1 - delta) * eps_r. A position is scored when every
// component with nonzero weight is present; otherwise it is NaN.
inline Matrix score(const ResidualLedger& ledger, double delta) {
  require(delta >= 0.0 && delta <= 1.0, ErrorKind::invalid_argument, "delta must lie in [0,1]");
  require(ledger.finalized(), ErrorKind::invalid_argument, "score: ledger not finalized");
  const Matrix& p = ledger.eps_p();
  const Matrix& r = ledger.eps_r();
  Matrix s(p.rows(), p.cols());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    const double ep = p.data()[k], er = r.data()[k];
    if ((delta > 0.0 && std::isnan(ep)) || (delta < 1.0 && std::isnan(er))) {
      s.data()[k] = kAbsent;
    } else {
      s.data()[k] = (delta > 0.0 ? delta * ep : 0.0) + (delta < 1.0 ? (1.0 - delta) * er : 0.0);
    }
  }
  return s;
}

struct ThresholdConfig {
  double z_min = 2.0;
  double z_max = 10.0;
  double z_step = 0.5;
  bool prune = false;
  double prune_ratio = 0.13;

  void validate() const {
    require(z_step > 0.0 && z_min > 0.0 && z_min <= z_max, ErrorKind::config,
            "threshold grid needs 0 < z_min <= z_max and z_step > 0");
    require(prune_ratio > 0.0 && prune_ratio < 1.0, ErrorKind::config, "prune_ratio must lie in (0,1)");
  }

  std::vector<double> grid() const {
    std::vector<double> zs;
    const auto n = static_cast<long>(std::floor((z_max - z_min) / z_step + 1e-9));
    for (long k = 0; k <= n; ++k) zs.push_back(z_min + static_cast<double>(k) * z_step);
    return zs;
  }
};

namespace detail {

struct Moments {
  double mean = 0.0, sd = 0.0;
  std::size_t n = 0;
};

inline Moments moments(std::span<const double> xs, double below = std::numeric_limits<double>::infinity()) {
  Moments m;
  double sum = 0.0;
  for (double x : xs) {
    if (std::isnan(x) || x > below) continue;
    sum += x;
    ++m.n;
  }
  if (m.n == 0) return m;
  m.mean = sum / static_cast<double>(m.n);
  double ss = 0.0;
  for (double x : xs) {
    if (std::isnan(x) || x > below) continue;
    ss += (x - m.mean) * (x - m.mean);
  }
  m.sd = std::sqrt(ss / static_cast<double>(m.n));
  return m;
}

// Maximal runs [begin, end) of consecutive entries above tau; NaN breaks a run.
inline std::vector<std::pair<std::size_t, std::size_t>> runs_above(std::span<const double> xs, double tau) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t i = 0;
  while (i < xs.size()) {
    if (!(xs[i] > tau)) {
      ++i;
      continue;
    }
    const std::size_t b = i;
    while (i < xs.size() && xs[i] > tau) ++i;
    runs.emplace_back(b, i);
  }
  return runs;
}

}  // namespace detail

// Chooses tau = mean + z * sd over the z grid, maximizing
//   (d_mean / mean + d_sd / sd) / (|e_a| + n_runs^2)
// where d_* are the drops after removing the scores above tau. The first
// maximizer in grid order wins. NaN entries are skipped and split runs.
inline double dynamic_threshold(std::span<const double> scores, const ThresholdConfig& cfg = {}) {
  cfg.validate();
  const detail::Moments all = detail::moments(scores);
  require(all.n >= 10, ErrorKind::invalid_argument, "dynamic_threshold needs at least 10 finite scores");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : scores) {
    require(std::isnan(x) || std::isfinite(x), ErrorKind::numeric, "infinite score");
    if (!std::isnan(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  // Identical scores have sigma = 0 even when the rounded mean says otherwise.
  if (all.sd <= 0.0 || lo == hi) return std::numeric_limits<double>::infinity();
  const std::vector<double> zs = cfg.grid();
  double best_tau = all.mean + zs.back() * all.sd;
  double best = -std::numeric_limits<double>::infinity();
  for (double z : zs) {
    const double tau = all.mean + z * all.sd;
    const detail::Moments below = detail::moments(scores, tau);
    const std::size_t n_above = all.n - below.n;
    if (n_above == 0 || below.n == 0) continue;
    const double n_seq = static_cast<double>(detail::runs_above(scores, tau).size());
    const double gain = (all.mean - below.mean) / all.mean + (all.sd - below.sd) / all.sd;
    const double crit = gain / (static_cast<double>(n_above) + n_seq * n_seq);
    if (crit > best) {
      best = crit;
      best_tau = tau;
    }
  }
  return best_tau;
}

// Anomaly pruning: runs are ranked by their peak; walking down the ranking,
// runs after the last relative drop above `ratio` (measured against the
// next run's peak, or the highest normal score) are reclassified as normal.
// Returns the indices of the entries that remain flagged.
inline std::vector<std::size_t> prune_anomalies(std::span<const double> scores, double tau, double ratio) {
  auto runs = detail::runs_above(scores, tau);
  if (runs.empty()) return {};
  std::vector<std::pair<double, std::size_t>> peaks;  // (peak, run index)
  for (std::size_t r = 0; r < runs.size(); ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = runs[r].first; i < runs[r].second; ++i) peak = std::max(peak, scores[i]);
    peaks.emplace_back(peak, r);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double max_normal = -std::numeric_limits<double>::infinity();
  for (double x : scores) {
    if (!std::isnan(x) && !(x > tau)) max_normal = std::max(max_normal, x);
  }
  std::size_t keep = 0;
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    const double next = k + 1 < peaks.size() ? peaks[k + 1].first : max_normal;
    if (std::isfinite(next) && peaks[k].first > 0.0 && (peaks[k].first - next) / peaks[k].first > ratio) keep = k + 1;
    if (!std::isfinite(next)) keep = k + 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& run = runs[peaks[k].second];
    for (std::size_t i = run.first; i < run.second; ++i) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

enum class ThresholdMode { global, per_series };

inline const char* to_string(ThresholdMode m) { return m == ThresholdMode::global ? "global" : "per_series"; }

inline ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "global") return ThresholdMode::global;
  if (s == "per_series") return ThresholdMode::per_series;
  throw Error(ErrorKind::config, "unknown threshold mode '" + s + "'");
}

struct AnomalyReport {
  Matrix scores;               // N × T, NaN where absent
  Vector thresholds;           // one entry (global) or one per series
  std::vector<Position> positions;
  double delta = 0.5;
  int epoch = -1;
  std::vector<FillRecord> fills;

  double threshold_for(std::size_t series) const {
    return thresholds.size() == 1 ? thresholds(0) : thresholds(static_cast<Eigen::Index>(series));
  }
};

inline AnomalyReport detect(const ResidualLedger& ledger, double delta, ThresholdMode mode,
                            const ThresholdConfig& cfg = {}) {
  AnomalyReport r;
  r.delta = delta;
  r.scores = score(ledger, delta);
  const auto N = static_cast<std::size_t>(r.scores.rows());
  const auto T = static_cast<std::size_t>(r.scores.cols());
  auto flag_sequence = [&](std::span<const double> seq, double tau, auto&& to_position) {
    if (!std::isfinite(tau)) return;
    if (cfg.prune) {
      for (std::size_t k : prune_anomalies(seq, tau, cfg.prune_ratio)) {
        if (auto p = to_position(k)) r.positions.push_back(*p);
      }
    } else {
      for (std::size_t k = 0; k < seq.size(); ++k) {
        if (seq[k] > tau) {
          if (auto p = to_position(k)) r.positions.push_back(*p);
        }
      }
    }
  };
  if (mode == ThresholdMode::global) {
    // Series-major with a NaN separator so runs never span two series.
    std::vector<double> flat;
    flat.reserve(N * (T + 1));
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t t = 0; t < T; ++t) flat.push_back(r.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
      flat.push_back(kAbsent);
    }
    const double tau = dynamic_threshold(flat, cfg);
    r.thresholds = Vector::Constant(1, tau);
    flag_sequence(flat, tau, [&](std::size_t k) -> std::optional<Position> {
      return Position{k / (T + 1), k % (T + 1)};
    });
  } else {
    r.thresholds.resize(static_cast<Eigen::Index>(N));
    std::vector<double> row(T);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t t = 0; t < T; ++t) row[t] = r.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
      const double tau = dynamic_threshold(row, cfg);
      r.thresholds(static_cast<Eigen::Index>(i)) = tau;
      flag_sequence(row, tau, [&](std::size_t t) -> std::optional<Position> { return Position{i, t}; });
    }
  }
  std::sort(r.positions.begin(), r.positions.end());
  for (const auto& p : r.positions) {
    require(p.timestamp < ledger.train_end(), ErrorKind::invalid_argument,
            "detection flagged a position outside the training range");
  }
  return r;
}

// Frozen-parameter sweep over `samples`, accumulating residuals.
inline ResidualLedger residual_sweep(const SttsModel& model, const SeriesPanel& panel,
                                     std::span<const WindowSample> samples, std::size_t train_end) {
  ResidualLedger ledger(panel.n_series(), panel.n_timestamps(), train_end);
  const auto P = static_cast<Eigen::Index>(model.config().window);
  for (const auto& s : samples) {
    const ModelOutput out = model.forward(panel, s);
    const Vector window = panel.values.row(static_cast<Eigen::Index>(s.target))
                              .segment(static_cast<Eigen::Index>(s.timestamp) - P, P)
                              .transpose();
    ledger.accumulate(s, label(panel, s), window, out);
  }
  ledger.finalize();
  return ledger;
}

}  // namespace stts
