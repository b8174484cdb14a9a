#pragma once

// The spatio-temporal forecaster: selected block -> temporal and spatial
// attention -> feature-wise transformer -> recurrent integration ->
// predictor (next value) and reconstructor (target window).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stts/attention.hpp"
#include "stts/autodiff.hpp"
#include "stts/embedding.hpp"
#include "stts/panel.hpp"
#include "stts/transformer.hpp"
#include "stts/windows.hpp"

namespace stts {

struct ModelConfig {
  std::size_t n_series = 1;
  std::size_t window = 16;          // P
  std::size_t n_aux = 5;            // M, including the target
  std::size_t d_time = 32;          // d1
  std::size_t d_spat = 16;          // d2; 0 when no graph is available
  std::size_t d_att = 32;           // d'
  std::size_t encoder_hidden = 64;  // hidden width of the window encoder f
  std::size_t hidden = 64;          // recurrent integrator / decoder width
  std::size_t heads = 2;
  std::size_t ffn_hidden = 32;
  double gamma = 0.9;
  double leaky_slope = 0.2;
  bool use_selection = true;
  bool use_temporal_attention = true;
  bool use_spatial_attention = true;
  bool use_transformer = true;
  bool use_recurrent = true;

  std::size_t embedding_dim() const { return d_time + d_spat; }
  std::size_t stacked_rows() const {
    return n_aux * (1 + (use_temporal_attention ? 1 : 0) + (use_spatial_attention ? 1 : 0));
  }

  void validate() const {
    require(window >= 1, ErrorKind::config, "window must be positive");
    require(n_aux >= 1 && n_aux <= n_series, ErrorKind::config, "n_aux must lie in [1, n_series]");
    require(d_time >= 1 && d_att >= 1 && encoder_hidden >= 1 && hidden >= 1 && heads >= 1 &&
                ffn_hidden >= 1,
            ErrorKind::config, "model widths must be positive");
    require(gamma >= 0.0 && gamma <= 1.0, ErrorKind::config, "gamma must lie in [0,1]");
    require(leaky_slope >= 0.0 && leaky_slope < 1.0, ErrorKind::config,
            "leaky_slope must lie in [0,1)");
  }

  std::map<std::string, std::string> to_map() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    auto d = [](double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      return os.str();
    };
    return {{"n_series", std::to_string(n_series)},
            {"window", std::to_string(window)},
            {"n_aux", std::to_string(n_aux)},
            {"d_time", std::to_string(d_time)},
            {"d_spat", std::to_string(d_spat)},
            {"d_att", std::to_string(d_att)},
            {"encoder_hidden", std::to_string(encoder_hidden)},
            {"hidden", std::to_string(hidden)},
            {"heads", std::to_string(heads)},
            {"ffn_hidden", std::to_string(ffn_hidden)},
            {"gamma", d(gamma)},
            {"leaky_slope", d(leaky_slope)},
            {"use_selection", b(use_selection)},
            {"use_temporal_attention", b(use_temporal_attention)},
            {"use_spatial_attention", b(use_spatial_attention)},
            {"use_transformer", b(use_transformer)},
            {"use_recurrent", b(use_recurrent)}};
  }

  static ModelConfig from_map(const std::map<std::string, std::string>& m) {
    auto get = [&](const std::string& k) -> const std::string& {
      const auto it = m.find(k);
      require(it != m.end(), ErrorKind::parse, "model config is missing '" + k + "'");
      return it->second;
    };
    auto sz = [&](const std::string& k) { return static_cast<std::size_t>(std::stoull(get(k))); };
    auto bl = [&](const std::string& k) { return get(k) == "true"; };
    ModelConfig c;
    c.n_series = sz("n_series");
    c.window = sz("window");
    c.n_aux = sz("n_aux");
    c.d_time = sz("d_time");
    c.d_spat = sz("d_spat");
    c.d_att = sz("d_att");
    c.encoder_hidden = sz("encoder_hidden");
    c.hidden = sz("hidden");
    c.heads = sz("heads");
    c.ffn_hidden = sz("ffn_hidden");
    c.gamma = std::stod(get("gamma"));
    c.leaky_slope = std::stod(get("leaky_slope"));
    c.use_selection = bl("use_selection");
    c.use_temporal_attention = bl("use_temporal_attention");
    c.use_spatial_attention = bl("use_spatial_attention");
    c.use_transformer = bl("use_transformer");
    c.use_recurrent = bl("use_recurrent");
    return c;
  }
};

// Named dense parameters addressed by slot index.
class ParamStore {
 public:
  int add(std::string name, Matrix init) {
    require(!index_.contains(name), ErrorKind::invalid_argument, "duplicate parameter '" + name + "'");
    index_[name] = static_cast<int>(values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return static_cast<int>(values_.size()) - 1;
  }

  int slot(const std::string& name) const {
    const auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::invalid_argument, "unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  Matrix& operator[](int slot) { return values_[static_cast<std::size_t>(slot)]; }
  const Matrix& operator[](int slot) const { return values_[static_cast<std::size_t>(slot)]; }
  Matrix& operator[](const std::string& name) { return (*this)[slot(name)]; }
  const Matrix& operator[](const std::string& name) const { return (*this)[slot(name)]; }

  std::size_t size() const { return values_.size(); }
  const std::string& name(int slot) const { return names_[static_cast<std::size_t>(slot)]; }
  const std::vector<std::string>& names() const { return names_; }

  std::vector<Matrix> zeros_like() const {
    std::vector<Matrix> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(Matrix::Zero(v.rows(), v.cols()));
    return out;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, int> index_;
};

struct ModelOutput {
  double prediction = 0.0;
  Vector reconstruction;  // length P
  Vector hidden;
};

struct LossTerms {
  double total = 0.0;
  double prediction = 0.0;
  double reconstruction = 0.0;
};

// L = beta * |Y - Y_hat| + (1 - beta) * sqrt(mean_t (X_t - X_hat_t)^2)
inline LossTerms joint_loss(double prediction, const Vector& reconstruction, double target,
                            const Vector& target_window, double beta) {
  require(beta >= 0.0 && beta <= 1.0, ErrorKind::invalid_argument, "beta must lie in [0,1]");
  require(reconstruction.size() == target_window.size(), ErrorKind::dimension,
          "reconstruction length must equal the window length");
  LossTerms l;
  l.prediction = std::sqrt((target - prediction) * (target - prediction));
  l.reconstruction = std::sqrt((target_window - reconstruction).squaredNorm() /
                               static_cast<double>(target_window.size()));
  l.total = beta * l.prediction + (1.0 - beta) * l.reconstruction;
  return l;
}

inline LossTerms joint_loss(const ModelOutput& out, double target, const Vector& target_window,
                            double beta) {
  return joint_loss(out.prediction, out.reconstruction, target, target_window, beta);
}

class SttsModel {
 public:
  // Nodes of one recorded forward pass.
  struct Graph {
    ad::Var prediction;       // 1 × 1
    ad::Var reconstruction;   // P × 1
    ad::Var hidden;           // H × 1
    ad::Var temporal_weights; // invalid when temporal attention is off
    ad::Var spatial_weights;  // invalid when spatial attention is off
    ad::Var encoded;          // M × d1, f applied to every selected window
  };

  struct LossGraph {
    ad::Var total, prediction, reconstruction;
  };

  SttsModel() = default;

  SttsModel(const ModelConfig& config, std::optional<Matrix> graph, std::uint64_t seed)
      : config_(config), graph_(std::move(graph)) {
    config_.validate();
    require(graph_.has_value() == (config_.d_spat > 0), ErrorKind::config,
            "d_spat must be positive exactly when a graph is supplied");
    if (graph_) {
      require(static_cast<std::size_t>(graph_->rows()) == config_.n_series, ErrorKind::dimension,
              "graph size does not match n_series");
      norm_adjacency_ = normalized_adjacency(*graph_);
    }
    std::mt19937_64 rng(seed);
    init_params(rng);
    temporal_ = MomentumEmbedding(config_.n_series, config_.d_time, config_.gamma, rng());
    refresh_selection();
  }

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  MomentumEmbedding& temporal() { return temporal_; }
  const MomentumEmbedding& temporal() const { return temporal_; }
  const std::optional<Matrix>& graph() const { return graph_; }
  bool has_spatial() const { return config_.d_spat > 0; }

  WindowEncoder encoder() const {
    return WindowEncoder{params_["enc.w1"], params_["enc.b1"], params_["enc.w2"], params_["enc.b2"]};
  }

  // Recomputes the cached spatial embeddings from the current GCN parameters.
  void sync() {
    if (has_spatial()) {
      spatial_ = compute_spatial(norm_adjacency_,
                                 GcnParams{params_["gcn.h0"], params_["gcn.w1"], params_["gcn.w2"]});
    }
  }

  const Matrix& spatial_embeddings() const { return spatial_; }

  // N × d: temporal momentum state ⊕ spatial embedding.
  Matrix embeddings() const {
    if (!has_spatial()) return temporal_.state();
    Matrix e(temporal_.state().rows(), static_cast<Eigen::Index>(config_.embedding_dim()));
    e << temporal_.state(), spatial_;
    return e;
  }

  void refresh_selection() {
    sync();
    const Matrix e = embeddings();
    selection_.assign(config_.n_series, {});
    for (std::size_t i = 0; i < config_.n_series; ++i) {
      selection_[i] = config_.use_selection ? select_auxiliary(i, e, config_.n_aux)
                                            : select_fixed(i, config_.n_series, config_.n_aux);
    }
  }

  const std::vector<std::vector<std::size_t>>& selection() const { return selection_; }
  void set_selection(std::vector<std::vector<std::size_t>> s) { selection_ = std::move(s); }

  ad::Var param(ad::Tape& tape, const std::string& name) const {
    const int s = params_.slot(name);
    return tape.parameter(params_[s], s);
  }

  // GCN forward on the tape (N × d2).
  ad::Var spatial_forward(ad::Tape& tape) const {
    require(has_spatial(), ErrorKind::invalid_argument, "model has no spatial embedding");
    const ad::Var a = tape.reference(norm_adjacency_);
    const ad::Var h1 = ad::tanh(ad::matmul(ad::matmul(a, param(tape, "gcn.h0")), param(tape, "gcn.w1")));
    return ad::tanh(ad::matmul(ad::matmul(a, h1), param(tape, "gcn.w2")));
  }

  // Records one forward pass. `block` is M × P with the target in row 0,
  // `series` the selected indices, `spatial_rows` the M × d2 spatial
  // embeddings of those series (ignored when the model has none).
  Graph build(ad::Tape& tape, const Matrix& block, std::span<const std::size_t> series,
              std::optional<ad::Var> spatial_rows) const {
    const auto M = static_cast<Eigen::Index>(config_.n_aux);
    const auto P = static_cast<Eigen::Index>(config_.window);
    require(block.rows() == M && block.cols() == P, ErrorKind::dimension,
            "selected block must be M × P");
    require(series.size() == config_.n_aux, ErrorKind::dimension, "selection must list M series");
    require(block.allFinite(), ErrorKind::numeric, "selected block has non-finite entries");
    Graph g;
    const ad::Var x = tape.constant(block);

    // Temporal embedding rows: gamma * state + (1 - gamma) * f(window); the
    // momentum state enters as a constant.
    const ad::Var h = ad::tanh(ad::add_row(ad::matmul(x, param(tape, "enc.w1")), param(tape, "enc.b1")));
    g.encoded = ad::tanh(ad::add_row(ad::matmul(h, param(tape, "enc.w2")), param(tape, "enc.b2")));

    std::vector<ad::Var> stacked{x};
    if (config_.use_temporal_attention) {
      const auto r = temporal_attention(x, param(tape, "tatt.w"), param(tape, "tatt.a"), config_.leaky_slope);
      g.temporal_weights = r.weights;
      stacked.push_back(r.output);
    }
    if (config_.use_spatial_attention) {
      Matrix state_rows(M, static_cast<Eigen::Index>(config_.d_time));
      for (Eigen::Index k = 0; k < M; ++k) {
        state_rows.row(k) = config_.gamma * temporal_.state().row(static_cast<Eigen::Index>(series[static_cast<std::size_t>(k)]));
      }
      ad::Var e = ad::add(ad::scale(g.encoded, 1.0 - config_.gamma), tape.constant(std::move(state_rows)));
      if (has_spatial()) {
        require(spatial_rows.has_value() && spatial_rows->rows() == M &&
                    spatial_rows->cols() == static_cast<Eigen::Index>(config_.d_spat),
                ErrorKind::dimension, "spatial rows must be M × d2");
        e = ad::concat_cols({e, *spatial_rows});
      }
      const auto r = spatial_attention(x, e, param(tape, "satt.w"), param(tape, "satt.a"),
                                       param(tape, "satt.proj_w"), param(tape, "satt.proj_b"),
                                       config_.leaky_slope);
      g.spatial_weights = r.weights;
      stacked.push_back(r.output);
    }
    g.hidden = integrate(tape, stacked.size() == 1 ? x : ad::concat_rows(stacked));
    g.prediction = ad::add(ad::matmul(param(tape, "pred.w"), g.hidden), param(tape, "pred.b"));
    g.reconstruction = ad::lstm_decode(g.hidden, param(tape, "dec.w"), param(tape, "dec.b"),
                                       param(tape, "dec.out_w"), param(tape, "dec.out_b"), P);
    return g;
  }

  // Transformer over the stacked rows, then the recurrent integrator along
  // the P axis (or a dense map when the recurrent layer is switched off).
  ad::Var integrate(ad::Tape& tape, ad::Var stacked) const {
    require(stacked.rows() == static_cast<Eigen::Index>(config_.stacked_rows()) &&
                stacked.cols() == static_cast<Eigen::Index>(config_.window),
            ErrorKind::dimension, "stacked block has the wrong shape");
    ad::Var tokens = stacked;
    if (config_.use_transformer) tokens = transformer_block(stacked, transformer_weights(tape));
    if (config_.use_recurrent) {
      return ad::lstm_encode(tokens, param(tape, "rnn.w"), param(tape, "rnn.b"));
    }
    return ad::tanh(ad::add_col(ad::matmul(param(tape, "flat.w"), ad::flatten(tokens)), param(tape, "flat.b")));
  }

  TransformerWeights transformer_weights(ad::Tape& tape) const {
    TransformerWeights w;
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::string s = std::to_string(h);
      w.wq.push_back(param(tape, "tf.wq" + s));
      w.wk.push_back(param(tape, "tf.wk" + s));
      w.wv.push_back(param(tape, "tf.wv" + s));
    }
    w.wo = param(tape, "tf.wo");
    w.bo = param(tape, "tf.bo");
    w.ln1_gain = param(tape, "tf.ln1_g");
    w.ln1_bias = param(tape, "tf.ln1_b");
    w.ff_w1 = param(tape, "tf.ff_w1");
    w.ff_b1 = param(tape, "tf.ff_b1");
    w.ff_w2 = param(tape, "tf.ff_w2");
    w.ff_b2 = param(tape, "tf.ff_b2");
    w.ln2_gain = param(tape, "tf.ln2_g");
    w.ln2_bias = param(tape, "tf.ln2_b");
    return w;
  }

  static LossGraph loss(ad::Tape& tape, const Graph& g, const Matrix& block, double target, double beta) {
    require(beta >= 0.0 && beta <= 1.0, ErrorKind::invalid_argument, "beta must lie in [0,1]");
    const ad::Var y = tape.constant(Matrix::Constant(1, 1, target));
    const ad::Var xt = tape.constant(block.row(0).transpose());
    LossGraph l;
    l.prediction = ad::abs(ad::sub(y, g.prediction));
    l.reconstruction = ad::sqrt(ad::mean(ad::square(ad::sub(xt, g.reconstruction))));
    l.total = ad::add(ad::scale(l.prediction, beta), ad::scale(l.reconstruction, 1.0 - beta));
    return l;
  }

  // Evaluation-mode forward for one sample; reads the panel, the current
  // selection, momentum state, and cached spatial embeddings.
  ModelOutput forward(const SeriesPanel& panel, const WindowSample& sample) const {
    const auto& series = selection_.at(sample.target);
    const Matrix block = window_block(panel, sample, config_.window, series);
    ad::Tape tape;
    return forward_block(tape, block, series);
  }

  ModelOutput forward_block(ad::Tape& tape, const Matrix& block, std::span<const std::size_t> series) const {
    std::optional<ad::Var> spatial_rows;
    if (has_spatial()) {
      Matrix rows(static_cast<Eigen::Index>(series.size()), spatial_.cols());
      for (std::size_t k = 0; k < series.size(); ++k) {
        rows.row(static_cast<Eigen::Index>(k)) = spatial_.row(static_cast<Eigen::Index>(series[k]));
      }
      spatial_rows = tape.constant(std::move(rows));
    }
    const Graph g = build(tape, block, series, spatial_rows);
    ModelOutput out;
    out.prediction = g.prediction.scalar();
    out.reconstruction = g.reconstruction.value().col(0);
    out.hidden = g.hidden.value().col(0);
    return out;
  }

  void save(const std::string& path, const std::map<std::string, std::string>& run_config = {}) const {
    std::ofstream out(path);
    require(out.good(), ErrorKind::io, "cannot write checkpoint '" + path + "'");
    out << std::setprecision(17);
    out << "stts-checkpoint " << kCheckpointVersion << '\n';
    for (const auto& [k, v] : config_.to_map()) out << "model." << k << '=' << v << '\n';
    for (const auto& [k, v] : run_config) out << "run." << k << '=' << v << '\n';
    out << "end-config\n";
    auto write_matrix = [&](const std::string& tag, const Matrix& m) {
      out << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
        out << '\n';
      }
    };
    for (std::size_t s = 0; s < params_.size(); ++s) {
      write_matrix("param " + params_.name(static_cast<int>(s)), params_[static_cast<int>(s)]);
    }
    write_matrix("momentum", temporal_.state());
    if (graph_) write_matrix("graph", *graph_);
    out << "selection " << selection_.size() << ' ' << config_.n_aux << '\n';
    for (const auto& row : selection_) {
      for (std::size_t k = 0; k < row.size(); ++k) out << (k ? " " : "") << row[k];
      out << '\n';
    }
    out << "end\n";
    require(out.good(), ErrorKind::io, "failed writing checkpoint '" + path + "'");
  }

  // Loads a checkpoint; `run_config` receives the stored run settings.
  static SttsModel load(const std::string& path, std::map<std::string, std::string>* run_config = nullptr) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open checkpoint '" + path + "'");
    std::string line;
    std::getline(in, line);
    require(line == "stts-checkpoint " + std::to_string(kCheckpointVersion), ErrorKind::parse,
            path + ": not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
    std::map<std::string, std::string> model_keys;
    while (std::getline(in, line) && line != "end-config") {
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorKind::parse, path + ": malformed config line");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key.rfind("model.", 0) == 0) model_keys[key.substr(6)] = value;
      else if (key.rfind("run.", 0) == 0 && run_config) (*run_config)[key.substr(4)] = value;
    }
    const ModelConfig config = ModelConfig::from_map(model_keys);

    auto read_matrix = [&](const std::string& expected_tag) {
      std::string tag;
      Eigen::Index r = 0, c = 0;
      in >> tag;
      if (tag == "param") {
        std::string name;
        in >> name;
        tag += " " + name;
      }
      require(tag == expected_tag, ErrorKind::parse, path + ": expected '" + expected_tag + "', found '" + tag + "'");
      in >> r >> c;
      Matrix m(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) in >> m(i, j);
      }
      require(static_cast<bool>(in), ErrorKind::parse, path + ": truncated matrix '" + expected_tag + "'");
      return m;
    };

    SttsModel model;
    model.config_ = config;
    model.config_.validate();
    {
      std::mt19937_64 rng(0);
      model.init_params(rng);  // establishes the expected names and shapes
    }
    for (std::size_t s = 0; s < model.params_.size(); ++s) {
      const int slot = static_cast<int>(s);
      Matrix m = read_matrix("param " + model.params_.name(slot));
      require(m.rows() == model.params_[slot].rows() && m.cols() == model.params_[slot].cols(),
              ErrorKind::dimension, path + ": parameter '" + model.params_.name(slot) + "' has the wrong shape");
      model.params_[slot] = std::move(m);
    }
    Matrix momentum = read_matrix("momentum");
    require(static_cast<std::size_t>(momentum.rows()) == config.n_series &&
                static_cast<std::size_t>(momentum.cols()) == config.d_time,
            ErrorKind::dimension, path + ": momentum state has the wrong shape");
    model.temporal_ = MomentumEmbedding(std::move(momentum), config.gamma);
    if (config.d_spat > 0) {
      model.graph_ = read_matrix("graph");
      model.norm_adjacency_ = normalized_adjacency(*model.graph_);
    }
    std::string tag;
    std::size_t n = 0, m = 0;
    in >> tag >> n >> m;
    require(tag == "selection" && n == config.n_series && m == config.n_aux, ErrorKind::parse,
            path + ": malformed selection table");
    model.selection_.assign(n, std::vector<std::size_t>(m));
    for (auto& row : model.selection_) {
      for (auto& v : row) {
        in >> v;
        require(v < n, ErrorKind::parse, path + ": selection index out of range");
      }
    }
    in >> tag;
    require(tag == "end", ErrorKind::parse, path + ": missing end marker");
    model.sync();
    return model;
  }

  // Throws unless this model was built with the same architecture as `expected`.
  void check_compatible(const ModelConfig& expected) const {
    const auto have = config_.to_map();
    for (const auto& [k, v] : expected.to_map()) {
      if (k == "gamma" || k == "leaky_slope") {
        require(std::stod(have.at(k)) == std::stod(v), ErrorKind::dimension,
                "checkpoint " + k + "=" + have.at(k) + " does not match config " + k + "=" + v);
      } else {
        require(have.at(k) == v, ErrorKind::dimension,
                "checkpoint " + k + "=" + have.at(k) + " does not match config " + k + "=" + v);
      }
    }
  }

  static constexpr int kCheckpointVersion = 1;

 private:
  void init_params(std::mt19937_64& rng) {
    params_ = ParamStore();
    const auto P = static_cast<Eigen::Index>(config_.window);
    const auto M = static_cast<Eigen::Index>(config_.n_aux);
    const auto d1 = static_cast<Eigen::Index>(config_.d_time);
    const auto d2 = static_cast<Eigen::Index>(config_.d_spat);
    const auto d = d1 + d2;
    const auto da = static_cast<Eigen::Index>(config_.d_att);
    const auto he = static_cast<Eigen::Index>(config_.encoder_hidden);
    const auto H = static_cast<Eigen::Index>(config_.hidden);
    const auto F = static_cast<Eigen::Index>(config_.ffn_hidden);
    const auto dh = static_cast<Eigen::Index>(head_dim(config_.window, config_.heads));
    const auto S = static_cast<Eigen::Index>(config_.stacked_rows());

    auto xavier = [&](Eigen::Index r, Eigen::Index c) {
      const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
      std::uniform_real_distribution<double> u(-limit, limit);
      Matrix m(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
      }
      return m;
    };
    auto zeros = [](Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c).eval(); };
    auto lstm_bias = [&]() {
      Matrix b = Matrix::Zero(4 * H, 1);
      b.block(H, 0, H, 1).setOnes();  // forget gate
      return b;
    };

    params_.add("enc.w1", xavier(P, he));
    params_.add("enc.b1", zeros(1, he));
    params_.add("enc.w2", xavier(he, d1));
    params_.add("enc.b2", zeros(1, d1));
    if (d2 > 0) {
      params_.add("gcn.h0", xavier(static_cast<Eigen::Index>(config_.n_series), d2));
      params_.add("gcn.w1", xavier(d2, d2));
      params_.add("gcn.w2", xavier(d2, d2));
    }
    if (config_.use_temporal_attention) {
      params_.add("tatt.w", xavier(da, 2 * M));
      params_.add("tatt.a", xavier(da, 1));
    }
    if (config_.use_spatial_attention) {
      params_.add("satt.w", xavier(da, 2 * (P + d)));
      params_.add("satt.a", xavier(da, 1));
      params_.add("satt.proj_w", xavier(P + d, P));
      params_.add("satt.proj_b", zeros(1, P));
    }
    if (config_.use_transformer) {
      for (std::size_t h = 0; h < config_.heads; ++h) {
        const std::string s = std::to_string(h);
        params_.add("tf.wq" + s, xavier(P, dh));
        params_.add("tf.wk" + s, xavier(P, dh));
        params_.add("tf.wv" + s, xavier(P, dh));
      }
      params_.add("tf.wo", xavier(dh * static_cast<Eigen::Index>(config_.heads), P));
      params_.add("tf.bo", zeros(1, P));
      params_.add("tf.ln1_g", Matrix::Ones(1, P));
      params_.add("tf.ln1_b", zeros(1, P));
      params_.add("tf.ff_w1", xavier(P, F));
      params_.add("tf.ff_b1", zeros(1, F));
      params_.add("tf.ff_w2", xavier(F, P));
      params_.add("tf.ff_b2", zeros(1, P));
      params_.add("tf.ln2_g", Matrix::Ones(1, P));
      params_.add("tf.ln2_b", zeros(1, P));
    }
    if (config_.use_recurrent) {
      params_.add("rnn.w", xavier(4 * H, S + H));
      params_.add("rnn.b", lstm_bias());
    } else {
      params_.add("flat.w", xavier(H, S * P));
      params_.add("flat.b", zeros(H, 1));
    }
    params_.add("pred.w", xavier(1, H));
    params_.add("pred.b", zeros(1, 1));
    params_.add("dec.w", xavier(4 * H, 1 + H));
    params_.add("dec.b", lstm_bias());
    params_.add("dec.out_w", xavier(1, H));
    params_.add("dec.out_b", zeros(1, 1));
  }

  ModelConfig config_;
  std::optional<Matrix> graph_;
  Matrix norm_adjacency_;
  ParamStore params_;
  MomentumEmbedding temporal_;
  Matrix spatial_;
  std::vector<std::vector<std::size_t>> selection_;
};

}  // namespace stts
