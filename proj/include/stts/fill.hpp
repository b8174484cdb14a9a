#pragma once

// Replacement rules for flagged training points.

#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stts/panel.hpp"

namespace stts {

enum class FillStrategy { remove, mean, lowess, periodic_mean };

inline const char* to_string(FillStrategy f) {
  switch (f) {
    case FillStrategy::remove: return "remove";
    case FillStrategy::mean: return "mean";
    case FillStrategy::lowess: return "lowess";
    case FillStrategy::periodic_mean: return "periodic_mean";
  }
  return "?";
}

inline FillStrategy parse_fill_strategy(const std::string& s) {
  if (s == "remove") return FillStrategy::remove;
  if (s == "mean") return FillStrategy::mean;
  if (s == "lowess") return FillStrategy::lowess;
  if (s == "periodic_mean") return FillStrategy::periodic_mean;
  throw Error(ErrorKind::config, "unknown fill strategy '" + s + "'");
}

struct FillParams {
  std::size_t k = 3;            // mean: clean neighbours taken on each side
  std::size_t lowess_span = 10; // lowess: half-width of the neighbourhood in timestamps
  std::size_t period = 7;       // periodic_mean: seasonal length
  std::size_t limit = 0;        // neighbours must lie in [0, limit); 0 means the whole series
};

struct FillRecord {
  Position position;
  double old_value = 0.0;
  double new_value = 0.0;
};

namespace detail {

inline double fill_mean(const SeriesPanel& panel, const std::set<Position>& flagged, Position p,
                        std::size_t k, std::size_t limit) {
  double sum = 0.0;
  std::size_t n = 0;
  std::size_t taken = 0;
  for (std::size_t t = p.timestamp; t > 0 && taken < k;) {
    --t;
    if (flagged.contains({p.series, t})) continue;
    sum += panel.at(p.series, t);
    ++n;
    ++taken;
  }
  taken = 0;
  for (std::size_t t = p.timestamp + 1; t < limit && taken < k; ++t) {
    if (flagged.contains({p.series, t})) continue;
    sum += panel.at(p.series, t);
    ++n;
    ++taken;
  }
  require(n > 0, ErrorKind::numeric, "mean fill: empty neighborhood");
  return sum / static_cast<double>(n);
}

// Locally weighted linear fit with tricube weights, evaluated at p.timestamp.
inline double fill_lowess(const SeriesPanel& panel, const std::set<Position>& flagged, Position p,
                          std::size_t span, std::size_t limit) {
  const double radius = static_cast<double>(span) + 1.0;
  const std::size_t lo = p.timestamp > span ? p.timestamp - span : 0;
  const std::size_t hi = std::min(limit, p.timestamp + span + 1);
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t t = lo; t < hi; ++t) {
    if (t == p.timestamp || flagged.contains({p.series, t})) continue;
    const double x = static_cast<double>(t) - static_cast<double>(p.timestamp);
    const double u = std::abs(x) / radius;
    const double w = std::pow(1.0 - u * u * u, 3);
    const double y = panel.at(p.series, t);
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
    ++n;
  }
  require(n > 0 && sw > 0, ErrorKind::numeric, "lowess fill: empty neighborhood");
  const double mx = sx / sw, my = sy / sw;
  const double varx = sxx / sw - mx * mx;
  if (varx <= 1e-12) return my;
  const double slope = (sxy / sw - mx * my) / varx;
  return my - slope * mx;  // fitted value at x = 0
}

inline double fill_periodic(const SeriesPanel& panel, const std::set<Position>& flagged, Position p,
                            std::size_t period, std::size_t limit) {
  require(period >= 1, ErrorKind::invalid_argument, "periodic_mean needs a positive period");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = p.timestamp % period; t < limit; t += period) {
    if (t == p.timestamp || flagged.contains({p.series, t})) continue;
    sum += panel.at(p.series, t);
    ++n;
  }
  require(n > 0, ErrorKind::numeric, "periodic_mean fill: no clean same-phase values");
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Rewrites the flagged points in place (all replacement values are computed
// from the panel as it was on entry). For `remove` the panel is unchanged and
// the records carry old == new; the caller excludes the label samples.
inline std::vector<FillRecord> fill_anomalies(SeriesPanel& panel, std::span<const Position> positions,
                                              FillStrategy strategy, const FillParams& params) {
  const std::size_t limit = params.limit == 0 ? panel.n_timestamps() : params.limit;
  require(limit <= panel.n_timestamps(), ErrorKind::invalid_argument, "fill limit beyond panel");
  const std::set<Position> flagged(positions.begin(), positions.end());
  for (const auto& p : flagged) {
    require(p.series < panel.n_series() && p.timestamp < limit, ErrorKind::invalid_argument,
            "fill position outside the training range");
  }
  std::vector<FillRecord> records;
  records.reserve(flagged.size());
  for (const auto& p : flagged) {
    const double old = panel.at(p.series, p.timestamp);
    double v = old;
    switch (strategy) {
      case FillStrategy::remove: break;
      case FillStrategy::mean: v = detail::fill_mean(panel, flagged, p, params.k, limit); break;
      case FillStrategy::lowess: v = detail::fill_lowess(panel, flagged, p, params.lowess_span, limit); break;
      case FillStrategy::periodic_mean: v = detail::fill_periodic(panel, flagged, p, params.period, limit); break;
    }
    records.push_back({p, old, v});
  }
  for (const auto& r : records) panel.at(r.position.series, r.position.timestamp) = r.new_value;
  return records;
}

}  // namespace stts
