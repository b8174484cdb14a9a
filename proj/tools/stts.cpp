// Command-line entry point: generate | train | evaluate | detect | ablate.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "stts/commands.hpp"

namespace {

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string output_dir, data, graph, labels, checkpoint;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_file, "Flat key=value config file");
  cmd->add_option("-s,--set", o.overrides, "Override a config key (key=value); repeatable");
  cmd->add_option("-o,--output-dir", o.output_dir, "Output directory");
  cmd->add_option("--data", o.data, "Panel CSV");
  cmd->add_option("--graph", o.graph, "Graph edge-list CSV");
  cmd->add_option("--labels", o.labels, "Anomaly label CSV");
  cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  cmd->add_option("--seed", o.seed, "Random seed");
}

// defaults < config file < command line
stts::RunConfig resolve(const CommonOptions& o) {
  stts::RunConfig cfg;
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (!o.data.empty()) cfg.data_path = o.data;
  if (!o.graph.empty()) cfg.graph_path = o.graph;
  if (!o.labels.empty()) cfg.labels_path = o.labels;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (o.seed) cfg.train.seed = *o.seed;
  for (const auto& kv : o.overrides) cfg.apply(kv);
  return cfg;
}

void print_epoch(const stts::EpochMetrics& m, const stts::AnomalyReport* r) {
  std::printf("epoch %d loss %.6f valid_rmse %.6f valid_mae %.6f samples %zu", m.epoch, m.train_loss, m.valid_rmse,
              m.valid_mae, m.n_train_samples);
  if (r) std::printf(" ead_flagged %zu threshold %.6g", r->positions.size(), r->thresholds(0));
  std::printf("\n");
  std::fflush(stdout);
}

void print_detection(const stts::DetectionReport& d) {
  std::printf("detection precision %.6f recall %.6f f1 %.6f tp %zu fp %zu fn %zu\n", d.precision, d.recall, d.f1,
              d.true_positives, d.false_positives, d.false_negatives);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal forecasting with embedded anomaly detection"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, detect_o, ablate_o;
  auto* gen = app.add_subcommand("generate", "Write a synthetic panel, graph and labels");
  add_common(gen, gen_o);
  auto* train = app.add_subcommand("train", "Train with embedded anomaly detection");
  add_common(train, train_o);
  bool no_ead = false;
  train->add_flag("--no-ead", no_ead, "Disable anomaly detection (plain training)");
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  add_common(eval, eval_o);
  std::string split = "test";
  eval->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  auto* det = app.add_subcommand("detect", "One residual sweep and anomaly report for a checkpoint");
  add_common(det, detect_o);
  auto* abl = app.add_subcommand("ablate", "Run the ablation and baseline comparison arms");
  add_common(abl, ablate_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error kind=usage msg=" << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) {
      const auto r = stts::cmd_generate(resolve(gen_o));
      std::printf("panel %s\nlabels %s\n", r.panel_path.c_str(), r.labels_path.c_str());
      if (!r.graph_path.empty()) std::printf("graph %s\n", r.graph_path.c_str());
      std::printf("anomalous_points %zu\n", r.n_anomalies);
    } else if (train->parsed()) {
      auto cfg = resolve(train_o);
      if (no_ead) cfg.train.ead.enabled = false;
      const auto o = stts::cmd_train(cfg, print_epoch);
      std::printf("checkpoint %s\n", o.checkpoint_path.c_str());
      if (o.detection) print_detection(*o.detection);
    } else if (eval->parsed()) {
      const auto kind = split == "train" ? stts::SplitKind::train
                        : split == "valid" ? stts::SplitKind::valid
                                           : stts::SplitKind::test;
      const auto m = stts::cmd_evaluate(resolve(eval_o), kind);
      std::printf("split %s rmse %.10g mae %.10g samples %zu\n", stts::to_string(m.split), m.rmse, m.mae,
                  m.n_samples);
    } else if (det->parsed()) {
      const auto o = stts::cmd_detect(resolve(detect_o));
      std::printf("flagged %zu threshold %.6g\n", o.report.positions.size(), o.report.thresholds(0));
      if (o.detection) print_detection(*o.detection);
    } else if (abl->parsed()) {
      stts::cmd_ablate(resolve(ablate_o), [](const stts::ArmResult& a) {
        std::printf("%s | %s rmse %.6f mae %.6f", a.section.c_str(), a.arm.c_str(), a.rmse, a.mae);
        if (a.detection_f1) std::printf(" f1 %.4f", *a.detection_f1);
        std::printf("\n");
        std::fflush(stdout);
      });
    }
  } catch (const stts::Error& e) {
    std::cerr << "error kind=" << stts::to_string(e.kind()) << " msg=" << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal msg=" << e.what() << '\n';
    return 1;
  }
  return 0;
}
