#pragma once

#include <cmath>
#include <set>
#include <span>
#include <utility>

#include "stts/panel.hpp"

namespace stts {

enum class SplitKind { train, valid, test };

inline const char* to_string(SplitKind s) {
  switch (s) {
    case SplitKind::train: return "train";
    case SplitKind::valid: return "valid";
    case SplitKind::test: return "test";
  }
  return "?";
}

struct MetricReport {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t n_samples = 0;
  SplitKind split = SplitKind::test;
};

// Pairs are (prediction, truth), already in the units the metric is wanted in.
inline MetricReport rmse_mae(std::span<const std::pair<double, double>> pairs,
                             SplitKind split = SplitKind::test) {
  require(!pairs.empty(), ErrorKind::invalid_argument, "rmse_mae: no predictions");
  double sq = 0.0, ab = 0.0;
  for (const auto& [pred, truth] : pairs) {
    const double e = pred - truth;
    require(std::isfinite(e), ErrorKind::numeric, "rmse_mae: non-finite prediction");
    sq += e * e;
    ab += std::abs(e);
  }
  const double n = static_cast<double>(pairs.size());
  return {std::sqrt(sq / n), ab / n, pairs.size(), split};
}

struct DetectionReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t true_positives = 0, false_positives = 0, false_negatives = 0;
};

// Precision is 0 with no positions, recall 0 with no labels.
inline DetectionReport detection_quality(const std::set<Position>& positions, const BoolMatrix& labels) {
  DetectionReport r;
  for (const auto& p : positions) {
    require(static_cast<Eigen::Index>(p.series) < labels.rows() &&
                static_cast<Eigen::Index>(p.timestamp) < labels.cols(),
            ErrorKind::invalid_argument, "detection_quality: position outside the label matrix");
    if (labels(static_cast<Eigen::Index>(p.series), static_cast<Eigen::Index>(p.timestamp))) {
      ++r.true_positives;
    } else {
      ++r.false_positives;
    }
  }
  const auto n_labels = static_cast<std::size_t>(labels.count());
  r.false_negatives = n_labels - r.true_positives;
  if (!positions.empty()) r.precision = static_cast<double>(r.true_positives) / static_cast<double>(positions.size());
  if (n_labels > 0) r.recall = static_cast<double>(r.true_positives) / static_cast<double>(n_labels);
  if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

}  // namespace stts
