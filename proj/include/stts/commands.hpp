#pragma once

// Top-level operations behind the command-line tool. Each writes its
// outputs (and the resolved config) into the configured output directory.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stts/baselines.hpp"
#include "stts/config.hpp"
#include "stts/metrics.hpp"
#include "stts/synthetic.hpp"
#include "stts/trainer.hpp"

namespace stts {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- exports

inline void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out = detail::open_out(path);
  out << std::setprecision(10) << "epoch,train_loss,valid_rmse,valid_mae\n";
  for (const auto& m : history) {
    out << m.epoch << ',' << m.train_loss << ',' << m.valid_rmse << ',' << m.valid_mae << '\n';
  }
}

// Values in original units; scores and thresholds in normalized units.
inline void write_anomalies_csv(const std::string& path, const std::vector<AnomalyReport>& reports,
                                const SeriesPanel& panel) {
  std::ofstream out = detail::open_out(path);
  out << std::setprecision(10) << "epoch,series_id,timestamp,score,threshold,old_value,new_value\n";
  for (const auto& r : reports) {
    std::map<Position, const FillRecord*> fills;
    for (const auto& f : r.fills) fills[f.position] = &f;
    for (const auto& p : r.positions) {
      const auto it = fills.find(p);
      const double old_v = it != fills.end() ? it->second->old_value : panel.at(p.series, p.timestamp);
      const double new_v = it != fills.end() ? it->second->new_value : old_v;
      out << r.epoch << ',' << panel.series_ids[p.series] << ',' << p.timestamp << ','
          << r.scores(static_cast<Eigen::Index>(p.series), static_cast<Eigen::Index>(p.timestamp)) << ','
          << r.threshold_for(p.series) << ',' << panel.denormalize(p.series, old_v) << ','
          << panel.denormalize(p.series, new_v) << '\n';
    }
  }
}

inline void write_embeddings_csv(const std::string& path, const SttsModel& model, const SeriesPanel& panel) {
  const Matrix e = model.embeddings();
  std::ofstream out = detail::open_out(path);
  out << std::setprecision(10) << "series_id";
  for (Eigen::Index j = 0; j < e.cols(); ++j) out << ",e_" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    out << panel.series_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < e.cols(); ++j) out << ',' << e(i, j);
    out << '\n';
  }
}

// ------------------------------------------------ checkpoint side channel
//
// Besides the model, a checkpoint records what is needed to rebuild the
// panel state the model was trained on: normalization statistics and the
// fills applied to the training range (normalized values).

namespace detail {

inline std::string encode_stats(const std::vector<NormStats>& stats) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < stats.size(); ++i) os << (i ? ";" : "") << stats[i].mean << ':' << stats[i].std;
  return os.str();
}

inline std::vector<NormStats> decode_stats(const std::string& text) {
  std::vector<NormStats> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto c = item.find(':');
    require(c != std::string::npos, ErrorKind::parse, "checkpoint: malformed normalization entry");
    out.push_back({std::stod(item.substr(0, c)), std::stod(item.substr(c + 1))});
  }
  return out;
}

inline std::string encode_fills(const SeriesPanel& trained, const SeriesPanel& original) {
  std::ostringstream os;
  os << std::setprecision(17);
  bool first = true;
  for (std::size_t i = 0; i < trained.n_series(); ++i) {
    for (std::size_t t = 0; t < trained.n_timestamps(); ++t) {
      if (trained.at(i, t) == original.at(i, t)) continue;
      os << (first ? "" : ";") << i << ':' << t << ':' << trained.at(i, t);
      first = false;
    }
  }
  return os.str();
}

inline void apply_fills(SeriesPanel& panel, const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto c1 = item.find(':');
    const auto c2 = item.find(':', c1 + 1);
    require(c1 != std::string::npos && c2 != std::string::npos, ErrorKind::parse, "checkpoint: malformed fill entry");
    const auto i = std::stoull(item.substr(0, c1));
    const auto t = std::stoull(item.substr(c1 + 1, c2 - c1 - 1));
    require(i < panel.n_series() && t < panel.n_timestamps(), ErrorKind::dimension,
            "checkpoint fill lies outside the panel");
    panel.at(i, t) = std::stod(item.substr(c2 + 1));
  }
}

}  // namespace detail

// ------------------------------------------------------------------ data

struct LoadedData {
  SeriesPanel panel;  // normalized
  SplitSpec split;
};

// Reads the configured data files. With `stats` the stored normalization is
// applied; otherwise statistics come from the training range.
inline LoadedData load_data(const RunConfig& cfg, const std::vector<NormStats>* stats = nullptr) {
  require(!cfg.data_path.empty(), ErrorKind::config, "data_path is required");
  LoadedData d;
  d.panel = read_panel_csv(cfg.data_path, cfg.missing_policy());
  if (!cfg.graph_path.empty()) d.panel.graph = read_graph_csv(cfg.graph_path, d.panel.series_ids);
  if (!cfg.labels_path.empty()) d.panel.anomaly_labels = read_labels_csv(cfg.labels_path, d.panel);
  d.split = cfg.split(d.panel.n_timestamps());
  d.split.validate(cfg.train.model.window, d.panel.n_timestamps());
  if (stats) apply_normalization(d.panel, *stats);
  else normalize(d.panel, d.split.train_end);
  return d;
}

inline void prepare_output_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  require(!ec, ErrorKind::io, "cannot create output directory '" + cfg.output_dir + "': " + ec.message());
  cfg.write((fs::path(cfg.output_dir) / "config.txt").string());
}

// -------------------------------------------------------------- generate

struct GenerateResult {
  std::string panel_path, graph_path, labels_path;
  std::size_t n_anomalies = 0;
};

inline GenerateResult cmd_generate(const RunConfig& cfg) {
  cfg.validate();
  SyntheticSpec spec = cfg.synthetic;
  spec.train_fraction = cfg.train_fraction;
  const SeriesPanel panel = generate_synthetic(spec, cfg.train.seed);
  prepare_output_dir(cfg);
  const fs::path dir(cfg.output_dir);
  GenerateResult r;
  r.panel_path = (dir / "panel.csv").string();
  r.labels_path = (dir / "labels.csv").string();
  write_panel_csv(r.panel_path, panel);
  write_labels_csv(r.labels_path, panel);
  if (panel.graph) {
    r.graph_path = (dir / "graph.csv").string();
    write_graph_csv(r.graph_path, panel);
  }
  r.n_anomalies = static_cast<std::size_t>(panel.anomaly_labels->count());
  return r;
}

// ----------------------------------------------------------------- train

struct TrainOutcome {
  TrainResult result;
  SplitSpec split;
  std::optional<DetectionReport> detection;
  std::string checkpoint_path;
};

inline TrainOutcome cmd_train(RunConfig cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  LoadedData data = load_data(cfg);
  prepare_output_dir(cfg);
  const fs::path dir(cfg.output_dir);

  TrainOutcome o{run_training(data.panel, data.split, cfg.train, progress), data.split, std::nullopt, {}};
  const TrainResult& r = o.result;
  if (data.panel.anomaly_labels) o.detection = detection_quality(r.detected, *data.panel.anomaly_labels);

  auto extras = cfg.to_map();
  extras["norm_stats"] = detail::encode_stats(data.panel.norm_stats);
  extras["fills"] = detail::encode_fills(r.panel, data.panel);
  extras["epochs_trained"] = std::to_string(cfg.train.n_epoch);
  o.checkpoint_path = (dir / "model.ckpt").string();
  r.model.save(o.checkpoint_path, extras);

  write_metrics_csv((dir / "metrics.csv").string(), r.history);
  write_anomalies_csv((dir / "anomalies.csv").string(), r.reports, data.panel);
  write_embeddings_csv((dir / "embeddings.csv").string(), r.model, r.panel);
  SeriesPanel cleaned = r.panel;
  cleaned.values = r.panel.raw_values();
  cleaned.norm_stats.clear();
  write_panel_csv((dir / "cleaned_panel.csv").string(), cleaned);
  return o;
}

// -------------------------------------------------------------- evaluate

struct LoadedCheckpoint {
  SttsModel model;
  std::map<std::string, std::string> run;
  LoadedData data;  // normalized with the stored statistics, stored fills applied
};

inline LoadedCheckpoint load_checkpoint(const RunConfig& cfg) {
  require(!cfg.checkpoint.empty(), ErrorKind::config, "checkpoint is required");
  LoadedCheckpoint c;
  c.model = SttsModel::load(cfg.checkpoint, &c.run);
  ModelConfig expected = cfg.train.model;
  expected.n_series = c.model.config().n_series;
  if (cfg.graph_path.empty()) expected.d_spat = 0;
  c.model.check_compatible(expected);
  const auto stats = detail::decode_stats(c.run.at("norm_stats"));
  c.data = load_data(cfg, &stats);
  require(c.data.panel.n_series() == c.model.config().n_series, ErrorKind::dimension,
          "checkpoint n_series=" + std::to_string(c.model.config().n_series) + " does not match data n_series=" +
              std::to_string(c.data.panel.n_series()));
  if (const auto it = c.run.find("fills"); it != c.run.end()) detail::apply_fills(c.data.panel, it->second);
  return c;
}

inline MetricReport cmd_evaluate(const RunConfig& cfg, SplitKind split = SplitKind::test) {
  cfg.validate();
  const LoadedCheckpoint c = load_checkpoint(cfg);
  const WindowSet w = make_windows(c.data.panel, c.data.split, c.model.config().window);
  const auto& samples = split == SplitKind::train ? w.train : split == SplitKind::valid ? w.valid : w.test;
  return evaluate(c.model, c.data.panel, samples, split);
}

// ---------------------------------------------------------------- detect

struct DetectOutcome {
  AnomalyReport report;
  std::optional<DetectionReport> detection;
};

// One residual sweep with the stored model; the data files are not touched
// (the would-be fills are reported only).
inline DetectOutcome cmd_detect(const RunConfig& cfg) {
  cfg.validate();
  LoadedCheckpoint c = load_checkpoint(cfg);
  prepare_output_dir(cfg);
  const WindowSet w = make_windows(c.data.panel, c.data.split, c.model.config().window);
  const ResidualLedger ledger = residual_sweep(c.model, c.data.panel, w.train, c.data.split.train_end);
  DetectOutcome o;
  o.report = detect(ledger, cfg.train.ead.delta, cfg.train.ead.mode, cfg.train.ead.threshold);
  o.report.epoch = -1;
  SeriesPanel scratch = c.data.panel;
  FillParams fp = cfg.train.ead.fill_params;
  fp.limit = c.data.split.train_end;
  o.report.fills = fill_anomalies(scratch, o.report.positions, cfg.train.ead.fill, fp);
  if (c.data.panel.anomaly_labels) {
    o.detection = detection_quality(std::set<Position>(o.report.positions.begin(), o.report.positions.end()),
                                    *c.data.panel.anomaly_labels);
  }
  write_anomalies_csv((fs::path(cfg.output_dir) / "anomalies.csv").string(), {o.report}, c.data.panel);
  return o;
}

// ---------------------------------------------------------------- ablate

struct ArmResult {
  std::string section, arm;
  double rmse = 0.0, mae = 0.0;
  std::optional<double> detection_f1;
};

struct AblationOutcome {
  std::vector<ArmResult> ablation;
  std::vector<ArmResult> comparison;
};

inline const std::vector<double>& delta_grid() {
  static const std::vector<double> g{0.0, 0.2, 0.5, 0.8, 1.0};
  return g;
}

// Trains on `panel` and scores the test split.
inline ArmResult run_arm(const SeriesPanel& panel, const SplitSpec& split, const TrainConfig& tc, std::string section,
                         std::string arm, const std::set<Position>* extra_detected = nullptr) {
  const TrainResult r = run_training(panel, split, tc);
  const WindowSet w = make_windows(r.panel, split, tc.model.window);
  const MetricReport m = evaluate(r.model, r.panel, w.test, SplitKind::test);
  ArmResult a{std::move(section), std::move(arm), m.rmse, m.mae, std::nullopt};
  if (panel.anomaly_labels) {
    std::set<Position> found = r.detected;
    if (extra_detected) found.insert(extra_detected->begin(), extra_detected->end());
    a.detection_f1 = detection_quality(found, *panel.anomaly_labels).f1;
  }
  return a;
}

inline void write_arms_csv(const std::string& path, const std::vector<ArmResult>& arms, bool with_section) {
  std::ofstream out = detail::open_out(path);
  out << std::setprecision(10) << (with_section ? "section,arm," : "method,") << "rmse,mae,detection_f1\n";
  for (const auto& a : arms) {
    if (with_section) out << a.section << ',';
    out << a.arm << ',' << a.rmse << ',' << a.mae << ',';
    if (a.detection_f1) out << *a.detection_f1;
    out << '\n';
  }
}

using ArmLogFn = std::function<void(const ArmResult&)>;

// Component switches, the delta grid and the fill strategies, each a full
// training run from the same data and seed; then the two-stage baselines.
inline AblationOutcome cmd_ablate(RunConfig cfg, const ArmLogFn& log = {}) {
  cfg.validate();
  if (cfg.ablate_epochs > 0) cfg.train.n_epoch = cfg.ablate_epochs;
  // Without a detection round every delta and fill arm is the plain model.
  const EadConfig& ead = cfg.train.ead;
  require(ead.enabled && ead.offset < cfg.train.n_epoch && ead.eta <= cfg.train.n_epoch, ErrorKind::config,
          "ablate needs at least one detection round: ead=true and eta, ead_offset below the " +
              std::to_string(cfg.train.n_epoch) + " training epochs");
  const LoadedData data = load_data(cfg);
  prepare_output_dir(cfg);
  const fs::path dir(cfg.output_dir);
  AblationOutcome o;

  // Identical configurations are trained once.
  std::map<std::map<std::string, std::string>, ArmResult> cache;
  auto arm = [&](const TrainConfig& tc, const std::string& section, const std::string& name) {
    RunConfig key_cfg = cfg;
    key_cfg.train = tc;
    const auto key = key_cfg.to_map();
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, run_arm(data.panel, data.split, tc, section, name)).first;
    ArmResult a = it->second;
    a.section = section;
    a.arm = name;
    if (log) log(a);
    return a;
  };

  const TrainConfig base = cfg.train;
  o.ablation.push_back(arm(base, "component", "full"));
  const std::vector<std::pair<std::string, bool ModelConfig::*>> switches{
      {"w/o auxiliary selection", &ModelConfig::use_selection},
      {"w/o spatial attention", &ModelConfig::use_spatial_attention},
      {"w/o temporal attention", &ModelConfig::use_temporal_attention},
      {"w/o feature-wise transformer", &ModelConfig::use_transformer},
      {"w/o recurrent integrator", &ModelConfig::use_recurrent}};
  for (const auto& [name, member] : switches) {
    TrainConfig tc = base;
    tc.model.*member = false;
    o.ablation.push_back(arm(tc, "component", name));
  }
  for (double d : delta_grid()) {
    TrainConfig tc = base;
    tc.ead.delta = d;
    std::ostringstream name;
    name << "delta=" << d;
    o.ablation.push_back(arm(tc, "delta", name.str()));
  }
  for (auto f : {FillStrategy::remove, FillStrategy::mean, FillStrategy::lowess, FillStrategy::periodic_mean}) {
    TrainConfig tc = base;
    tc.ead.fill = f;
    o.ablation.push_back(arm(tc, "fill", std::string("fill=") + to_string(f)));
  }
  write_arms_csv((dir / "ablation.csv").string(), o.ablation, true);

  TrainConfig plain = base;
  plain.ead.enabled = false;
  o.comparison.push_back(arm(plain, "comparison", "STTS"));
  o.comparison.push_back(arm(base, "comparison", "STTS-EAD"));
  const CleanOptions clean = cfg.clean_options(data.split.train_end);
  auto baseline = [&](const CleanResult& c, const std::string& name) {
    const std::set<Position> flagged(c.positions.begin(), c.positions.end());
    ArmResult a = run_arm(c.panel, data.split, plain, "comparison", name, &flagged);
    if (log) log(a);
    o.comparison.push_back(a);
  };
  baseline(three_sigma_clean(data.panel, clean), "STTS-3sigma");
  baseline(ewma_clean(data.panel, cfg.ewma_alpha, cfg.ewma_k, clean), "STTS-EWMA");
  write_arms_csv((dir / "comparison.csv").string(), o.comparison, false);
  return o;
}

}  // namespace stts
