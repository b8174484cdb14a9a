#pragma once

// Synthetic multivariate panels with known contamination: per-community
// seasonal patterns, per-series trend, community-correlated noise, and
// injected spikes, dips, and level shifts inside the training range.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "stts/panel.hpp"

namespace stts {

enum class AnomalyKind { spike, dip, level_shift };

inline const char* to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::spike: return "spike";
    case AnomalyKind::dip: return "dip";
    case AnomalyKind::level_shift: return "level_shift";
  }
  return "?";
}

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::spike;
  double magnitude = 6.0;  // in units of the clean series' standard deviation
  std::size_t count = 0;
};

struct SyntheticSpec {
  std::size_t n_series = 20;
  std::size_t n_timestamps = 400;
  std::size_t period = 7;
  std::size_t n_communities = 4;
  double seasonal_scale = 1.0;
  double trend_scale = 0.002;
  double noise_scale = 0.3;
  double cross_corr_strength = 0.5;
  bool with_graph = true;
  double p_in = 0.6;   // edge probability inside a community
  double p_out = 0.05; // edge probability across communities
  double train_fraction = 0.7;
  std::size_t anomaly_margin = 16;      // earliest timestamp eligible for injection
  std::size_t level_shift_length = 5;
  std::vector<AnomalySpec> anomalies;

  std::size_t train_end() const {
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(n_timestamps) * train_fraction));
  }

  void validate() const {
    require(n_series >= 1 && n_timestamps >= 4, ErrorKind::invalid_argument,
            "synthetic panel needs at least one series and four timestamps");
    require(period >= 1 && n_communities >= 1, ErrorKind::invalid_argument,
            "period and community count must be positive");
    require(seasonal_scale >= 0 && trend_scale >= 0 && noise_scale >= 0 &&
                cross_corr_strength >= 0 && cross_corr_strength <= 1,
            ErrorKind::invalid_argument, "synthetic scales must be nonnegative (correlation <= 1)");
    require(p_in >= 0 && p_in <= 1 && p_out >= 0 && p_out <= 1, ErrorKind::invalid_argument,
            "edge probabilities must lie in [0,1]");
    require(train_fraction > 0 && train_fraction < 1, ErrorKind::invalid_argument,
            "train_fraction must lie in (0,1)");
    require(level_shift_length >= 1, ErrorKind::invalid_argument, "level_shift_length must be positive");
    for (const auto& a : anomalies) {
      require(a.magnitude >= 0, ErrorKind::invalid_argument, "anomaly magnitude must be nonnegative");
    }
  }
};

struct SyntheticPanel {
  SeriesPanel panel;     // raw values, labels populated
  Matrix clean;          // values before injection
  Vector series_sigma;   // std of each clean series (the anomaly magnitude unit)
};

inline SyntheticPanel generate_synthetic_detailed(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto N = static_cast<Eigen::Index>(spec.n_series);
  const auto T = static_cast<Eigen::Index>(spec.n_timestamps);
  const std::size_t train_end = spec.train_end();

  std::size_t demand = 0;
  for (const auto& a : spec.anomalies) {
    demand += a.count * (a.kind == AnomalyKind::level_shift ? spec.level_shift_length : 1);
  }
  const std::size_t lo = spec.anomaly_margin;
  const std::size_t capacity = train_end > lo ? (train_end - lo) * spec.n_series : 0;
  require(demand <= capacity, ErrorKind::invalid_argument,
          "anomaly count exceeds training-range capacity");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Seasonal pattern per community, unit standard deviation.
  const auto C = spec.n_communities;
  std::vector<Vector> patterns(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double phase1 = 2.0 * std::numbers::pi * unif(rng);
    const double phase2 = 2.0 * std::numbers::pi * unif(rng);
    Vector p(static_cast<Eigen::Index>(spec.period));
    for (std::size_t k = 0; k < spec.period; ++k) {
      const double x = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.period);
      p(static_cast<Eigen::Index>(k)) = std::sin(x + phase1) + 0.5 * std::sin(2.0 * x + phase2) + 0.3 * gauss(rng);
    }
    const double mu = p.mean();
    const double sd = std::sqrt((p.array() - mu).square().mean());
    patterns[c] = sd > 0 ? Vector((p.array() - mu) / sd) : Vector(p.array() - mu);
  }

  std::vector<double> level(spec.n_series), amplitude(spec.n_series), slope(spec.n_series);
  for (std::size_t i = 0; i < spec.n_series; ++i) {
    level[i] = 8.0 + 4.0 * unif(rng);
    amplitude[i] = 0.7 + 0.6 * unif(rng);
    slope[i] = spec.trend_scale * gauss(rng);
  }

  Matrix shared(static_cast<Eigen::Index>(C), T);
  for (Eigen::Index c = 0; c < shared.rows(); ++c) {
    for (Eigen::Index t = 0; t < T; ++t) shared(c, t) = gauss(rng);
  }
  Matrix clean(N, T);
  const double own_w = std::sqrt(1.0 - spec.cross_corr_strength);
  const double shared_w = std::sqrt(spec.cross_corr_strength);
  for (Eigen::Index i = 0; i < N; ++i) {
    const std::size_t c = static_cast<std::size_t>(i) % C;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double seasonal = spec.seasonal_scale * amplitude[static_cast<std::size_t>(i)] *
                              patterns[c](t % static_cast<Eigen::Index>(spec.period));
      const double noise = spec.noise_scale *
                           (own_w * gauss(rng) + shared_w * shared(static_cast<Eigen::Index>(c), t));
      clean(i, t) = level[static_cast<std::size_t>(i)] + seasonal +
                    slope[static_cast<std::size_t>(i)] * static_cast<double>(t) + noise;
    }
  }

  SyntheticPanel out;
  out.clean = clean;
  out.series_sigma.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double mu = clean.row(i).mean();
    out.series_sigma(i) = std::sqrt((clean.row(i).array() - mu).square().mean());
  }

  SeriesPanel& panel = out.panel;
  panel.values = clean;
  for (std::size_t i = 0; i < spec.n_series; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%03zu", i);
    panel.series_ids.emplace_back(id);
  }
  panel.anomaly_labels = BoolMatrix::Constant(N, T, false);
  BoolMatrix& labels = *panel.anomaly_labels;

  for (const auto& a : spec.anomalies) {
    const std::size_t len = a.kind == AnomalyKind::level_shift ? spec.level_shift_length : 1;
    require(a.count == 0 || lo + len <= train_end, ErrorKind::invalid_argument,
            "anomaly count exceeds training-range capacity");
    for (std::size_t k = 0; k < a.count; ++k) {
      // Rejection sampling with a deterministic linear-probe fallback.
      std::uniform_int_distribution<std::size_t> pick_series(0, spec.n_series - 1);
      std::uniform_int_distribution<std::size_t> pick_t(lo, train_end - len);
      bool placed = false;
      std::size_t si = 0, st = 0;
      auto free_block = [&](std::size_t s, std::size_t t0) {
        if (t0 < lo || t0 + len > train_end) return false;
        for (std::size_t q = 0; q < len; ++q) {
          if (labels(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t0 + q))) return false;
        }
        return true;
      };
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        si = pick_series(rng);
        st = pick_t(rng);
        placed = free_block(si, st);
      }
      for (std::size_t s = 0; s < spec.n_series && !placed; ++s) {
        for (std::size_t t0 = lo; t0 + len <= train_end && !placed; ++t0) {
          if (free_block(s, t0)) {
            si = s;
            st = t0;
            placed = true;
          }
        }
      }
      require(placed, ErrorKind::invalid_argument, "anomaly count exceeds training-range capacity");
      const double sign = a.kind == AnomalyKind::dip ? -1.0 : 1.0;
      const double delta = sign * a.magnitude * out.series_sigma(static_cast<Eigen::Index>(si));
      for (std::size_t q = 0; q < len; ++q) {
        panel.at(si, st + q) += delta;
        labels(static_cast<Eigen::Index>(si), static_cast<Eigen::Index>(st + q)) = true;
      }
    }
  }

  if (spec.with_graph) {
    Matrix g = Matrix::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
      for (Eigen::Index j = i + 1; j < N; ++j) {
        const bool same = (static_cast<std::size_t>(i) % C) == (static_cast<std::size_t>(j) % C);
        if (unif(rng) < (same ? spec.p_in : spec.p_out)) {
          g(i, j) = 1.0;
          g(j, i) = 1.0;
        }
      }
    }
    panel.graph = std::move(g);
  }
  return out;
}

inline SeriesPanel generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  return generate_synthetic_detailed(spec, seed).panel;
}

}  // namespace stts
