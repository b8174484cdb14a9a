#pragma once

// Training loop with embedded anomaly detection: train an epoch, and on the
// detection schedule sweep the training set with frozen parameters, score,
// threshold, fill the flagged points and rebuild the sample list.

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "stts/ead.hpp"
#include "stts/metrics.hpp"
#include "stts/model.hpp"
#include "stts/optimizer.hpp"

namespace stts {

struct EadConfig {
  bool enabled = true;
  int eta = 5;
  int offset = 0;  // rounds run when epoch >= offset and (epoch - offset) % eta == 0
  // An eta larger than the epoch budget disables detection (eta = infinity).
  double delta = 0.5;
  ThresholdMode mode = ThresholdMode::global;
  ThresholdConfig threshold;
  FillStrategy fill = FillStrategy::periodic_mean;
  FillParams fill_params;

  bool runs_at(int epoch, int n_epoch) const {
    return enabled && eta <= n_epoch && epoch >= offset && (epoch - offset) % eta == 0;
  }

  void validate() const {
    require(eta >= 1, ErrorKind::config, "eta must be at least 1");
    require(offset >= 0, ErrorKind::config, "ead_offset must be nonnegative");
    require(delta >= 0.0 && delta <= 1.0, ErrorKind::config, "delta must lie in [0,1]");
    threshold.validate();
  }
};

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  double beta = 0.5;
  std::size_t batch_size = 128;
  int n_epoch = 20;
  std::uint64_t seed = 7;
  EadConfig ead;

  void validate() const {
    require(beta >= 0.0 && beta <= 1.0, ErrorKind::config, "beta must lie in [0,1]");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be positive");
    require(n_epoch >= 0, ErrorKind::config, "n_epoch must be nonnegative");
    ead.validate();
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_rmse = 0.0;
  double valid_mae = 0.0;
  std::size_t n_train_samples = 0;
};

struct TrainResult {
  SttsModel model;
  SeriesPanel panel;  // training range after all fills
  std::vector<AnomalyReport> reports;
  std::vector<EpochMetrics> history;
  std::set<Position> detected;  // union over rounds
  std::set<Position> excluded;  // label positions dropped by the remove strategy
};

using ProgressFn = std::function<void(const EpochMetrics&, const AnomalyReport*)>;

// Predictions and truths in original units.
inline MetricReport evaluate(const SttsModel& model, const SeriesPanel& panel, std::span<const WindowSample> samples,
                             SplitKind split) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) {
    const ModelOutput out = model.forward(panel, s);
    pairs.emplace_back(panel.denormalize(s.target, out.prediction), panel.denormalize(s.target, label(panel, s)));
  }
  return rmse_mae(pairs, split);
}

// Builds a model whose architecture matches the panel (graph -> spatial part).
inline SttsModel make_model(const SeriesPanel& panel, ModelConfig cfg, std::uint64_t seed) {
  cfg.n_series = panel.n_series();
  if (!panel.graph) cfg.d_spat = 0;
  return SttsModel(cfg, panel.graph, seed);
}

// One optimizer step on `batch`; returns the mean loss before the step.
inline double train_step(SttsModel& model, Adam& adam, const SeriesPanel& panel, std::span<const WindowSample> batch,
                         double beta) {
  require(!batch.empty(), ErrorKind::invalid_argument, "empty batch");
  const auto P = model.config().window;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<Matrix> grads = model.params().zeros_like();

  ad::Tape batch_tape;
  std::optional<ad::Var> spat;
  Matrix d_spat;
  if (model.has_spatial()) {
    spat = model.spatial_forward(batch_tape);
    d_spat = Matrix::Zero(spat->rows(), spat->cols());
  }

  std::map<std::size_t, std::vector<Vector>> seen;
  ad::Tape tape;
  double total = 0.0;
  for (const auto& s : batch) {
    tape.clear();
    const auto& series = model.selection().at(s.target);
    const Matrix block = window_block(panel, s, P, series);
    std::optional<ad::Var> rows;
    if (spat) {
      Matrix gathered(static_cast<Eigen::Index>(series.size()), spat->cols());
      for (std::size_t k = 0; k < series.size(); ++k) {
        gathered.row(static_cast<Eigen::Index>(k)) = spat->value().row(static_cast<Eigen::Index>(series[k]));
      }
      rows = tape.watched(std::move(gathered));
    }
    const auto g = model.build(tape, block, series, rows);
    const auto l = SttsModel::loss(tape, g, block, label(panel, s), beta);
    const double v = l.total.scalar();
    require(std::isfinite(v), ErrorKind::divergence,
            "non-finite loss at series " + std::to_string(s.target) + " timestamp " + std::to_string(s.timestamp));
    total += v;
    tape.backward(l.total, Matrix::Constant(1, 1, inv_b));
    tape.for_each_parameter_grad([&](int slot, const Matrix& gr) { grads[static_cast<std::size_t>(slot)] += gr; });
    if (rows && tape.has_grad(rows->id)) {
      const Matrix& gr = tape.grad(rows->id);
      for (std::size_t k = 0; k < series.size(); ++k) {
        d_spat.row(static_cast<Eigen::Index>(series[k])) += gr.row(static_cast<Eigen::Index>(k));
      }
    }
    seen[s.target].push_back(block.row(0).transpose());
  }
  if (spat) {
    batch_tape.backward(*spat, d_spat);
    batch_tape.for_each_parameter_grad([&](int slot, const Matrix& gr) { grads[static_cast<std::size_t>(slot)] += gr; });
  }
  adam.step(model.params(), grads);
  model.temporal().update_temporal(seen, model.encoder());
  model.sync();
  return total * inv_b;
}

inline TrainResult run_training(SeriesPanel panel, const SplitSpec& split, TrainConfig cfg,
                                const ProgressFn& progress = {}) {
  require(panel.normalized(), ErrorKind::invalid_argument, "training needs a normalized panel");
  cfg.validate();
  split.validate(cfg.model.window, panel.n_timestamps());
  const WindowSet windows = make_windows(panel, split, cfg.model.window);

  TrainResult result{make_model(panel, cfg.model, cfg.seed), {}, {}, {}, {}, {}};
  SttsModel& model = result.model;
  Adam adam(model.params(), cfg.adam);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<WindowSample> active = windows.train;
  FillParams fill_params = cfg.ead.fill_params;
  fill_params.limit = split.train_end;

  for (int epoch = 0; epoch < cfg.n_epoch; ++epoch) {
    model.refresh_selection();
    std::shuffle(active.begin(), active.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t b = 0; b < active.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(active.size(), b + cfg.batch_size);
      loss_sum += train_step(model, adam, panel, std::span(active).subspan(b, e - b), cfg.beta);
      ++n_batches;
    }

    const AnomalyReport* report = nullptr;
    if (cfg.ead.runs_at(epoch, cfg.n_epoch)) {
      const ResidualLedger ledger = residual_sweep(model, panel, windows.train, split.train_end);
      AnomalyReport r = detect(ledger, cfg.ead.delta, cfg.ead.mode, cfg.ead.threshold);
      r.epoch = epoch;
      r.fills = fill_anomalies(panel, r.positions, cfg.ead.fill, fill_params);
      result.detected.insert(r.positions.begin(), r.positions.end());
      if (cfg.ead.fill == FillStrategy::remove) {
        result.excluded.insert(r.positions.begin(), r.positions.end());
        active = active_samples(windows.train, result.excluded);
      }
      result.reports.push_back(std::move(r));
      report = &result.reports.back();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
    const MetricReport valid = evaluate(model, panel, windows.valid, SplitKind::valid);
    m.valid_rmse = valid.rmse;
    m.valid_mae = valid.mae;
    m.n_train_samples = active.size();
    result.history.push_back(m);
    if (progress) progress(m, report);
  }
  result.panel = std::move(panel);
  return result;
}

}  // namespace stts
