// Acceptance run: ten criteria, one PASS/FAIL line each. Exit status is the
// number of failed criteria (0 when everything passes).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "stts/attention.hpp"
#include "stts/baselines.hpp"
#include "stts/commands.hpp"
#include "stts/ead.hpp"
#include "stts/embedding.hpp"
#include "stts/fill.hpp"
#include "stts/metrics.hpp"
#include "stts/model.hpp"
#include "stts/synthetic.hpp"
#include "stts/trainer.hpp"
#include "stts/transformer.hpp"
#include "stts/windows.hpp"

using namespace stts;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kExact = 1e-12;            // oracle agreement in unit examples
constexpr double kGradTol = 1e-4;           // finite-difference relative error
constexpr double kAlphaTol = 1e-6;          // attention row sums
constexpr double kContraction = 0.9;        // expected per-update ratio
constexpr double kContractionTol = 1e-9;
constexpr int kContractionSteps = 50;
constexpr int kAttentionDraws = 100;
constexpr double kF1Min = 0.7;              // set from pilot runs
constexpr double kDeltaSlack = 0.05;
constexpr double kArmDiff = 1e-6;
constexpr double kUnitSeconds = 60.0;
constexpr double kGradSeconds = 60.0;
constexpr double kDetectSeconds = 600.0;
constexpr int kAblateEpochs = 6;  // detection rounds at epochs 0 and 5
const std::vector<std::uint64_t> kSeeds{7, 8, 9};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failed_.push_back(what);
  }
  Outcome outcome() const {
    std::ostringstream os;
    os << total_ - failed_.size() << "/" << total_ << " examples";
    for (const auto& f : failed_) os << "; failed: " << f;
    return {failed_.empty(), os.str()};
  }

 private:
  std::size_t total_ = 0;
  std::vector<std::string> failed_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

SeriesPanel panel_from(const Matrix& values) {
  SeriesPanel p;
  p.values = values;
  for (Eigen::Index i = 0; i < values.rows(); ++i) p.series_ids.push_back("s" + std::to_string(i));
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

template <class F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

template <class F>
bool throws(F&& f) {
  try {
    f();
  } catch (const Error&) {
    return true;
  }
  return false;
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

std::set<Position> labelled(const BoolMatrix& labels) {
  std::set<Position> out;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (Eigen::Index t = 0; t < labels.cols(); ++t) {
      if (labels(i, t)) out.insert({static_cast<std::size_t>(i), static_cast<std::size_t>(t)});
    }
  }
  return out;
}

// ------------------------------------------------------------ unit examples

void data_examples(Checks& c, const fs::path& dir) {
  write_text(dir / "constant.csv", "series_id,t0,t1,t2,t3\na,5.0,5.0,5.0,5.0\n");
  c.expect(error_text([&] { load_panel((dir / "constant.csv").string(), std::nullopt); }).find("constant series") !=
               std::string::npos,
           "constant series rejected");
  write_text(dir / "missing.csv", "series_id,t0,t1,t2,t3\na,1,2,3,4\nb,1,,3,5\nc,2,1,2,1\n");
  c.expect(throws([&] { read_panel_csv((dir / "missing.csv").string(), MissingPolicy::reject); }),
           "missing value rejected");

  SyntheticSpec spec;
  spec.n_series = 4;
  spec.n_timestamps = 80;
  c.expect(generate_synthetic(spec, 1).anomaly_labels->count() == 0, "no injection gives all-false labels");
  spec.n_series = 3;
  spec.n_timestamps = 100;
  spec.anomalies = {{AnomalyKind::spike, 10.0, 1}};
  const SyntheticPanel s = generate_synthetic_detailed(spec, 11);
  bool spike_ok = s.panel.anomaly_labels->count() == 1;
  for (const auto& p : labelled(*s.panel.anomaly_labels)) {
    const auto i = static_cast<Eigen::Index>(p.series), t = static_cast<Eigen::Index>(p.timestamp);
    spike_ok = spike_ok && std::abs(s.panel.values(i, t) - s.clean(i, t) - 10.0 * s.series_sigma(i)) < 1e-9;
  }
  c.expect(spike_ok, "10 sigma spike offset");
  c.expect(generate_synthetic(spec, 5).values == generate_synthetic(spec, 5).values, "same seed, identical panels");

  std::mt19937_64 rng(1);
  const SeriesPanel one = panel_from(randn(1, 10, rng));
  c.expect(make_windows(one, SplitSpec{10, 10, 10}, 9).train.size() == 1, "N=1 T=10 P=9 gives one sample");

  Matrix v(3, 8);
  for (int i = 0; i < 3; ++i) {
    for (int t = 0; t < 8; ++t) v(i, t) = 10 * i + t;
  }
  v(1, 5) = 99.0;
  SeriesPanel live = panel_from(v);
  const WindowSample sample{1, 5};
  const double before = label(live, sample);
  const std::vector<Position> at{{1, 5}};
  fill_anomalies(live, at, FillStrategy::mean, FillParams{1, 10, 7, 0});
  c.expect(label(live, sample) != before && label(live, sample) == (14 + 16) / 2.0,
           "fill changes the re-windowed label");

  Matrix clean(2, 70);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 70; ++t) clean(i, t) = std::sin(0.9 * (t % 7) + i) * (i + 1);
  }
  SeriesPanel periodic = panel_from(clean);
  periodic.at(0, 17) += 9.0;
  const std::vector<Position> corrupted{{0, 17}};
  fill_anomalies(periodic, corrupted, FillStrategy::periodic_mean, FillParams{3, 10, 7, 0});
  c.expect(std::abs(periodic.at(0, 17) - clean(0, 17)) < kExact,
           "periodic mean restores the true value");

  SeriesPanel mean = panel_from((Matrix(1, 6) << 1, 2, 3, 100, 5, 6).finished());
  const std::vector<Position> hundred{{0, 3}};
  fill_anomalies(mean, hundred, FillStrategy::mean, FillParams{1, 10, 7, 0});
  c.expect(mean.at(0, 3) == 4.0, "mean fill of 1,2,3,100,5,6 is 4");

  SeriesPanel rm = panel_from(randn(3, 30, rng));
  const std::vector<Position> drop{{0, 10}, {2, 20}};
  fill_anomalies(rm, drop, FillStrategy::remove, {});
  const WindowSet w = make_windows(rm, SplitSpec{25, 28, 30}, 4);
  c.expect(active_samples(w.train, std::set<Position>(drop.begin(), drop.end())).size() == w.train.size() - 2,
           "remove drops one sample per position");
}

void embedding_examples(Checks& c) {
  MomentumEmbedding m(Matrix::Ones(1, 1), 0.9);
  m.blend(0, Vector::Zero(1));
  c.expect(std::abs(m.state()(0, 0) - 0.9) < kExact, "momentum 1.0 -> 0.9");
  std::mt19937_64 rng(2);
  const Matrix init = randn(3, 2, rng);
  MomentumEmbedding frozen(init, 1.0);
  for (int k = 0; k < 5; ++k) {
    frozen.update_temporal({{1, {Vector::Ones(4)}}}, [](const Vector& x) { return Vector::Constant(2, 50.0 + x.sum()); });
  }
  c.expect(frozen.state() == init, "gamma=1 freezes the state");
  MomentumEmbedding geo(randn(1, 3, rng), 0.6);
  const Vector target = randn(3, 1, rng);
  double prev = (geo.state().row(0).transpose() - target).norm();
  bool geometric = true;
  for (int k = 0; k < 10; ++k) {
    geo.update_temporal({{0, {Vector::Zero(2)}}}, [&](const Vector&) { return target; });
    const double d = (geo.state().row(0).transpose() - target).norm();
    geometric = geometric && std::abs(d / prev - 0.6) < 1e-9;
    prev = d;
  }
  c.expect(geometric, "geometric convergence with ratio gamma");

  const GcnParams g{randn(4, 3, rng), randn(3, 3, rng), randn(3, 3, rng)};
  const Matrix self = compute_spatial(normalized_adjacency(Matrix::Zero(4, 4)), g);
  bool own = true;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const RowVector h1 = (g.node_features.row(i) * g.layer1).array().tanh().matrix();
    own = own && (self.row(i) - (h1 * g.layer2).array().tanh().matrix()).cwiseAbs().maxCoeff() < kExact;
  }
  c.expect(own, "empty graph uses own features only");
  Matrix path = Matrix::Zero(4, 4);
  path(0, 1) = path(1, 0) = path(0, 2) = path(2, 0) = 1.0;
  GcnParams sym{randn(4, 3, rng), randn(3, 3, rng), randn(3, 3, rng)};
  sym.node_features.row(2) = sym.node_features.row(1);
  const Matrix ps = compute_spatial(normalized_adjacency(path), sym);
  c.expect((ps.row(1) - ps.row(2)).cwiseAbs().maxCoeff() < kExact, "symmetric nodes get identical rows");
  const RowVector h0 = randn(1, 2, rng);
  const GcnParams k3{h0.replicate(3, 1), randn(2, 2, rng), randn(2, 2, rng)};
  const Matrix full = compute_spatial(normalized_adjacency(Matrix::Ones(3, 3) - Matrix::Identity(3, 3)), k3);
  double h1[2], h2[2];
  for (int j = 0; j < 2; ++j) h1[j] = std::tanh(h0(0) * k3.layer1(0, j) + h0(1) * k3.layer1(1, j));
  for (int j = 0; j < 2; ++j) h2[j] = std::tanh(h1[0] * k3.layer2(0, j) + h1[1] * k3.layer2(1, j));
  bool closed = true;
  for (Eigen::Index i = 0; i < 3; ++i) closed = closed && std::abs(full(i, 0) - h2[0]) < kExact && std::abs(full(i, 1) - h2[1]) < kExact;
  c.expect(closed, "complete graph matches the closed form");

  Vector a(3), e10(2), e01(2), e11(2);
  a << 0.3, -1.2, 2.0;
  e10 << 1, 0;
  e01 << 0, 1;
  e11 << 1, 1;
  c.expect(std::abs(similarity(a, a) - 1.0) < kExact, "identical vectors have similarity 1");
  c.expect(similarity(e10, e01) == 0.0, "orthogonal vectors have similarity 0");
  c.expect(std::abs(similarity(e10, e11) - 1.0 / std::sqrt(2.0)) < kExact, "45 degrees gives 1/sqrt(2)");

  const Matrix emb = randn(5, 3, rng);
  c.expect(select_auxiliary(3, emb, 1) == std::vector<std::size_t>{3}, "M=1 selects the target only");
  auto all = select_auxiliary(2, emb, 5);
  const bool first = all.front() == 2;
  std::sort(all.begin(), all.end());
  c.expect(first && all == std::vector<std::size_t>{0, 1, 2, 3, 4}, "M=N selects every series, target first");
  Matrix e4(4, 2);
  e4 << 1.0, 0.0, 0.9, 0.5, -1.0, 0.2, 1.0, 0.1;
  bool ranked = true;
  for (std::size_t target = 0; target < 4; ++target) {
    std::vector<std::pair<double, std::size_t>> r;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j == target) continue;
      double dot = 0, na = 0, nb = 0;
      for (int k = 0; k < 2; ++k) {
        dot += e4(target, k) * e4(j, k);
        na += e4(target, k) * e4(target, k);
        nb += e4(j, k) * e4(j, k);
      }
      r.emplace_back(dot / std::sqrt(na * nb), j);
    }
    for (std::size_t x = 0; x < r.size(); ++x) {
      for (std::size_t y = x + 1; y < r.size(); ++y) {
        if (r[y].first > r[x].first || (r[y].first == r[x].first && r[y].second < r[x].second)) std::swap(r[x], r[y]);
      }
    }
    for (std::size_t M = 1; M <= 4; ++M) {
      std::vector<std::size_t> want{target};
      for (std::size_t k = 0; k + 1 < M; ++k) want.push_back(r[k].second);
      ranked = ranked && select_auxiliary(target, e4, M) == want;
    }
  }
  c.expect(ranked, "selection matches the brute-force cosine ranking");
}

TransformerWeights random_transformer(ad::Tape& t, std::mt19937_64& rng, Eigen::Index width, std::size_t heads,
                                      Eigen::Index ffn) {
  const auto dh = static_cast<Eigen::Index>(head_dim(static_cast<std::size_t>(width), heads));
  TransformerWeights w;
  for (std::size_t h = 0; h < heads; ++h) {
    w.wq.push_back(t.constant(randn(width, dh, rng)));
    w.wk.push_back(t.constant(randn(width, dh, rng)));
    w.wv.push_back(t.constant(randn(width, dh, rng)));
  }
  w.wo = t.constant(randn(dh * static_cast<Eigen::Index>(heads), width, rng));
  w.bo = t.constant(randn(1, width, rng));
  w.ln1_gain = t.constant(randn(1, width, rng));
  w.ln1_bias = t.constant(randn(1, width, rng));
  w.ff_w1 = t.constant(randn(width, ffn, rng));
  w.ff_b1 = t.constant(randn(1, ffn, rng));
  w.ff_w2 = t.constant(randn(ffn, width, rng));
  w.ff_b2 = t.constant(randn(1, width, rng));
  w.ln2_gain = t.constant(randn(1, width, rng));
  w.ln2_bias = t.constant(randn(1, width, rng));
  return w;
}

void model_examples(Checks& c) {
  std::mt19937_64 rng(3);
  {
    ad::Tape t;
    const Matrix x = randn(3, 1, rng).replicate(1, 5);
    const auto r = temporal_attention(t.constant(x), t.constant(randn(4, 6, rng)), t.constant(randn(4, 1, rng)));
    c.expect((r.weights.value().array() - 0.2).abs().maxCoeff() < kExact, "identical columns give uniform weights");
  }
  {
    ad::Tape t;
    const Matrix x = randn(3, 1, rng);
    const auto r = temporal_attention(t.constant(x), t.constant(randn(4, 6, rng)), t.constant(randn(4, 1, rng)));
    bool ok = r.weights.value()(0, 0) == 1.0;
    for (Eigen::Index i = 0; i < 3; ++i) ok = ok && std::abs(r.output.value()(i, 0) - oracle::elu(x(i, 0))) < kExact;
    c.expect(ok, "P=1 attends to the single column");
  }
  {
    Matrix x(2, 3), w(2, 4), a(2, 1);
    x << 0.5, -1.0, 2.0, 1.5, 0.3, -0.7;
    w << 0.2, -0.4, 0.6, 0.1, -0.3, 0.8, 0.05, -0.5;
    a << 1.2, -0.7;
    const auto ref = oracle::temporal_attention(x, w, a, 0.2);
    ad::Tape t;
    const auto r = temporal_attention(t.constant(x), t.constant(w), t.constant(a), 0.2);
    c.expect(max_abs(r.output.value() - ref.output) < kExact && max_abs(r.weights.value() - ref.alpha) < kExact,
             "temporal attention M=2 P=3 matches the scalar oracle");
  }
  const Matrix pw = randn(5, 3, rng), pb = randn(1, 3, rng), sw = randn(4, 10, rng), sa = randn(4, 1, rng);
  {
    ad::Tape t;
    const Matrix x = randn(1, 3, rng), e = randn(1, 2, rng);
    const auto r = spatial_attention(t.constant(x), t.constant(e), t.constant(sw), t.constant(sa), t.constant(pw),
                                     t.constant(pb));
    Matrix unit(1, 5);
    unit << x, e;
    const Matrix want = unit.unaryExpr([](double z) { return oracle::elu(z); }) * pw + pb;
    c.expect(r.weights.value()(0, 0) == 1.0 && max_abs(r.output.value() - want) < kExact,
             "M=1 spatial output is the projected unit");
  }
  {
    ad::Tape t;
    Matrix x = randn(3, 3, rng), e = randn(3, 2, rng);
    x.row(2) = x.row(0);
    e.row(2) = e.row(0);
    const auto r = spatial_attention(t.constant(x), t.constant(e), t.constant(sw), t.constant(sa), t.constant(pw),
                                     t.constant(pb));
    c.expect(max_abs(r.output.value().row(0) - r.output.value().row(2)) < kExact, "identical series, identical rows");
  }
  {
    Matrix x(3, 2), e(3, 2), w(3, 8), a(3, 1), p(4, 2), b(1, 2);
    x << 0.4, -1.1, 1.3, 0.2, -0.6, 0.9;
    e << 0.1, 0.5, -0.8, 0.3, 0.7, -0.2;
    w << 0.3, -0.1, 0.2, 0.5, -0.4, 0.6, 0.1, -0.2, -0.5, 0.4, 0.3, -0.3, 0.2, 0.1, -0.6, 0.7, 0.2, 0.2, -0.7, 0.1,
        0.5, -0.4, 0.3, 0.05;
    a << 0.9, -1.1, 0.4;
    p << 0.5, -0.2, 0.1, 0.7, -0.3, 0.4, 0.6, -0.5;
    b << 0.05, -0.1;
    const auto ref = oracle::spatial_attention(x, e, w, a, p, b, 0.2);
    ad::Tape t;
    const auto r = spatial_attention(t.constant(x), t.constant(e), t.constant(w), t.constant(a), t.constant(p),
                                     t.constant(b), 0.2);
    c.expect(max_abs(r.output.value() - ref.output) < kExact && max_abs(r.weights.value() - ref.alpha) < kExact,
             "spatial attention M=3 P=2 d=2 matches the scalar oracle");
  }

  bool stacked = true;
  for (std::size_t M : {1u, 2u, 5u, 9u}) {
    ModelConfig mc;
    mc.n_aux = M;
    stacked = stacked && mc.stacked_rows() == 3 * M;
  }
  c.expect(stacked, "stacked row count is 3M");
  {
    ad::Tape t;
    TransformerWeights w = random_transformer(t, rng, 4, 2, 3);
    w.bo = t.constant(Matrix::Zero(1, 4));
    c.expect(max_abs(self_attention(t.constant(Matrix::Zero(6, 4)), w).value()) == 0.0,
             "zero input gives zero attention output");
  }
  {
    ad::Tape t;
    const TransformerWeights w = random_transformer(t, rng, 4, 2, 5);
    const Matrix tokens = randn(6, 4, rng);
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Matrix permuted(6, 4);
    for (int k = 0; k < 6; ++k) permuted.row(k) = tokens.row(perm[static_cast<std::size_t>(k)]);
    const Matrix out = transformer_block(t.constant(tokens), w).value();
    const Matrix out_p = transformer_block(t.constant(permuted), w).value();
    bool eq = true;
    for (int k = 0; k < 6; ++k) eq = eq && max_abs(out_p.row(k) - out.row(perm[static_cast<std::size_t>(k)])) < kExact;
    c.expect(eq, "6-token permutation equivariance");
  }

  bool shapes = true, deterministic = true;
  for (std::size_t M : {1u, 3u}) {
    for (std::size_t P : {1u, 4u}) {
      ModelConfig mc = oracle::tiny_config();
      mc.n_aux = M;
      mc.window = P;
      const SttsModel model(mc, oracle::ring_graph(mc.n_series), 17);
      const Matrix block = randn(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(P), rng);
      ad::Tape t1, t2;
      const ModelOutput o1 = model.forward_block(t1, block, model.selection()[0]);
      const ModelOutput o2 = model.forward_block(t2, block, model.selection()[0]);
      shapes = shapes && std::isfinite(o1.prediction) && o1.reconstruction.size() == static_cast<Eigen::Index>(P);
      deterministic = deterministic && o1.prediction == o2.prediction && o1.reconstruction == o2.reconstruction;
    }
  }
  c.expect(shapes, "scalar prediction and length-P reconstruction");
  c.expect(deterministic, "evaluation is deterministic");

  SyntheticSpec spec;
  spec.n_series = 6;
  spec.n_timestamps = 80;
  SeriesPanel panel = generate_synthetic(spec, 2);
  normalize(panel, spec.train_end());
  ModelConfig mc;
  mc.n_series = 6;
  mc.n_aux = 3;
  mc.window = 8;
  const SttsModel model(mc, panel.graph, 3);
  bool finite = true;
  for (std::size_t i = 0; i < 6; ++i) {
    const WindowSample s{i, 20};
    const Vector xt = panel.values.row(static_cast<Eigen::Index>(i)).segment(12, 8).transpose();
    finite = finite && std::isfinite(joint_loss(model.forward(panel, s), label(panel, s), xt, 0.5).total);
  }
  c.expect(finite, "untrained model has a finite first-batch loss");

  const Vector ones = Vector::Constant(3, 1.0), fives = Vector::Constant(3, 5.0);
  c.expect(joint_loss(3.0, fives, 1.0, ones, 0.5).total == 3.0, "beta=0.5, 2 and 4 give 3");
  c.expect(joint_loss(1.0, ones, 1.0, ones, 0.5).total == 0.0, "perfect output gives zero loss");
  c.expect(joint_loss(3.0, Vector::Constant(3, 100.0), 1.0, ones, 1.0).total == 2.0, "beta=1 ignores reconstruction");
}

ModelOutput output_with(const Vector& reconstruction, double prediction = 0.0) {
  ModelOutput o;
  o.prediction = prediction;
  o.reconstruction = reconstruction;
  return o;
}

void ead_examples(Checks& c) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::mt19937_64 rng(4);
  {
    SeriesPanel p = panel_from(randn(2, 12, rng));
    ResidualLedger l(2, 12, 10);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t t = 3; t < 10; ++t) {
        const Vector w = p.values.row(static_cast<Eigen::Index>(i)).segment(static_cast<Eigen::Index>(t - 3), 3).transpose();
        l.accumulate({i, t}, p.at(i, t), w, output_with(w, p.at(i, t)));
      }
    }
    l.finalize();
    const Matrix s = score(l, 0.5);
    bool zero = true;
    for (Eigen::Index k = 0; k < s.size(); ++k) zero = zero && (std::isnan(s.data()[k]) || s.data()[k] == 0.0);
    c.expect(zero, "perfect model has zero residuals");
    c.expect(detect(l, 0.5, ThresholdMode::global).positions.empty(), "zero residuals flag nothing");
  }
  {
    ResidualLedger l(1, 6, 6);
    Vector w(4), rec(4);
    w << 1, 2, 3, 4;
    rec << 1.5, 2, 1, 4.25;
    l.accumulate({0, 5}, 9.0, w, output_with(rec, 7.0));
    l.finalize();
    const double want[] = {0.5, 0.0, 2.0, 0.25};
    bool ok = l.eps_p()(0, 5) == 2.0;
    for (int k = 0; k < 4; ++k) ok = ok && l.eps_r()(0, 1 + k) == want[k] && l.counts()(0, 1 + k) == 1;
    c.expect(ok, "single window gives unit counts");
  }
  {
    ResidualLedger l(1, 8, 8);
    const Vector zeros = Vector::Zero(3);
    Vector r1(3), r2(3), r3(3);
    r1 << 0, 0, 1;
    r2 << 0, 2, 0;
    r3 << 3, 0, 0;
    l.accumulate({0, 4}, 0.0, zeros, output_with(r1));
    l.accumulate({0, 5}, 0.0, zeros, output_with(r2));
    l.accumulate({0, 6}, 0.0, zeros, output_with(r3));
    l.finalize();
    c.expect(l.eps_r()(0, 3) == 2.0, "three overlapping residuals 1,2,3 average to 2");
  }
  {
    Matrix ep(1, 2), er(1, 2);
    ep << 0.2, 1.0;
    er << 0.4, 3.0;
    const auto l = ResidualLedger::from_residuals(ep, er, 2);
    c.expect(std::abs(score(l, 0.5)(0, 0) - 0.3) < kExact, "delta=0.5, 0.2 and 0.4 give 0.3");
    c.expect(score(l, 0.0)(0, 1) == 3.0, "delta=0 gives the reconstruction residual");
    c.expect(score(l, 1.0)(0, 1) == 1.0, "delta=1 gives the prediction residual");
  }
  c.expect(std::isinf(dynamic_threshold(std::vector<double>(50, 0.7))), "equal scores flag nothing");
  {
    std::exponential_distribution<double> ex(2.0);
    std::vector<double> s(300);
    for (double& x : s) x = ex(rng);
    s[10] = s[11] = 9.0;
    s[200] = 7.0;
    const double tau = dynamic_threshold(s);
    bool inv = true;
    for (double k : {0.01, 3.0, 1000.0}) {
      std::vector<double> sc(s);
      for (double& x : sc) x *= k;
      const double tk = dynamic_threshold(sc);
      inv = inv && std::abs(tk - k * tau) <= 1e-9 * k * std::abs(tau);
      for (std::size_t j = 0; j < s.size(); ++j) inv = inv && (s[j] > tau) == (sc[j] > tk);
    }
    c.expect(inv, "scaling scores scales tau and keeps the flagged set");
  }
  {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    Matrix s(2, 100);
    for (Eigen::Index t = 0; t < 100; ++t) {
      s(0, t) = 0.1 * u(rng);
      s(1, t) = u(rng);
    }
    s(0, 40) = 1.0;
    s(1, 70) = 10.0;
    const auto l = ResidualLedger::from_residuals(s, s, 100);
    const auto g = detect(l, 0.5, ThresholdMode::global).positions;
    const auto ps = detect(l, 0.5, ThresholdMode::per_series).positions;
    const Position quiet{0, 40};
    std::vector<double> flat, row0;
    for (Eigen::Index i = 0; i < 2; ++i) {
      for (Eigen::Index t = 0; t < 100; ++t) flat.push_back(s(i, t));
      flat.push_back(nan);
    }
    for (Eigen::Index t = 0; t < 100; ++t) row0.push_back(s(0, t));
    c.expect(std::find(g.begin(), g.end(), quiet) == g.end() && std::find(ps.begin(), ps.end(), quiet) != ps.end() &&
                 !oracle::threshold(flat).flagged.contains(40) && oracle::threshold(row0).flagged.contains(40),
             "per-series flags the relative outlier global misses");
  }
  {
    SyntheticSpec spec;
    spec.n_series = 4;
    spec.n_timestamps = 120;
    spec.n_communities = 2;
    spec.anomaly_margin = 8;
    spec.anomalies = {{AnomalyKind::spike, 20.0, 1}};
    SeriesPanel p = generate_synthetic(spec, 9);
    normalize(p, spec.train_end());
    TrainConfig tc;
    tc.model.window = 6;
    tc.model.n_aux = 3;
    tc.model.d_time = 4;
    tc.model.d_spat = 3;
    tc.model.d_att = 6;
    tc.model.encoder_hidden = 8;
    tc.model.hidden = 8;
    tc.model.ffn_hidden = 6;
    tc.batch_size = 32;
    tc.n_epoch = 3;
    tc.seed = 5;
    tc.ead.eta = 1;
    const auto r = run_training(p, split_by_fraction(120, 0.7, 0.1), tc);
    const auto spike = labelled(*p.anomaly_labels);
    c.expect(spike.size() == 1 && r.detected.contains(*spike.begin()), "trained model flags a 20 sigma spike");
  }
  {
    EadConfig e;
    e.eta = 5;
    std::vector<int> rounds;
    for (int epoch = 0; epoch < 10; ++epoch) {
      if (e.runs_at(epoch, 10)) rounds.push_back(epoch);
    }
    c.expect(rounds == std::vector<int>{0, 5}, "n_epoch=10, eta=5 runs at 0 and 5");
    bool none = true;
    for (int epoch = 0; epoch < 4; ++epoch) none = none && !e.runs_at(epoch, 4);
    c.expect(none, "eta beyond n_epoch runs no rounds");
  }
}

std::vector<std::pair<double, double>> with_errors(std::initializer_list<double> errors) {
  std::vector<std::pair<double, double>> out;
  for (double e : errors) out.emplace_back(1.0 + e, 1.0);
  return out;
}

void metric_examples(Checks& c) {
  const MetricReport perfect = rmse_mae(with_errors({0, 0, 0}));
  c.expect(perfect.rmse == 0.0 && perfect.mae == 0.0, "perfect predictions give (0, 0)");
  const MetricReport a = rmse_mae(with_errors({3, -3}));
  c.expect(std::abs(a.rmse - 3.0) < kExact && std::abs(a.mae - 3.0) < kExact, "errors 3,-3 give 3 and 3");
  const MetricReport b = rmse_mae(with_errors({0, 4}));
  c.expect(std::abs(b.rmse - std::sqrt(8.0)) < kExact && std::abs(b.mae - 2.0) < kExact, "errors 0,4 give sqrt 8 and 2");

  std::mt19937_64 rng(3);
  const CleanResult tail = three_sigma_clean(panel_from(randn(1, 10000, rng)));
  c.expect(std::abs(static_cast<double>(tail.positions.size()) / 10000.0 - 0.0027) <= 0.0015,
           "3 sigma flags about 0.27% of gaussian data");
  c.expect(three_sigma_clean(panel_from(RowVector::Constant(50, 2.0))).positions.empty(),
           "3 sigma flags nothing on a constant series");
  RowVector r = randn(1, 200, rng);
  r(77) = r.mean() + 10.0 * std::sqrt((r.array() - r.mean()).square().mean());
  const auto spiked = three_sigma_clean(panel_from(r)).positions;
  c.expect(std::find(spiked.begin(), spiked.end(), Position{0, 77}) != spiked.end(), "3 sigma flags a 10 sigma spike");

  const RowVector x = randn(1, 40, rng);
  const EwmaTrace tr = ewma_trace(x, 1.0, 3.0);
  bool tracks = true;
  for (Eigen::Index t = 0; t < 40; ++t) tracks = tracks && tr.mean(t) == x(t);
  for (Eigen::Index t = 1; t < 40; ++t) tracks = tracks && tr.residual(t) == x(t) - x(t - 1);
  c.expect(tracks, "alpha=1 tracks the input");
  c.expect(ewma_clean(panel_from(RowVector::Constant(60, -1.5)), 0.1, 3.0).positions.empty(),
           "EWMA flags nothing on a constant series");
}

// --------------------------------------------------------------- criteria

Outcome unit_examples(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  Checks c;
  data_examples(c, dir);
  embedding_examples(c);
  model_examples(c);
  ead_examples(c);
  metric_examples(c);
  Outcome o = c.outcome();
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < kUnitSeconds;
  o.detail += " in " + std::to_string(secs) + " s";
  return o;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig mc = oracle::tiny_config();
  std::mt19937_64 rng(10);
  SttsModel model(mc, oracle::ring_graph(mc.n_series), 10);
  const Matrix block = randn(static_cast<Eigen::Index>(mc.n_aux), static_cast<Eigen::Index>(mc.window), rng);
  const auto series = model.selection()[1];
  std::map<std::string, double> worst;
  for (const auto& [name, err] : oracle::model_gradient_errors(model, block, series, 0.7, 0.5)) {
    double& w = worst[oracle::component_of(name)];
    w = std::max(w, err);
  }
  Outcome o{worst.size() == 6, {}};
  std::ostringstream os;
  os << std::setprecision(2);
  for (const auto& [component, err] : worst) {
    o.pass = o.pass && err < kGradTol;
    os << component << "=" << err << " ";
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < kGradSeconds;
  os << "(joint loss, M=3 P=4 d=4) in " << secs << " s";
  o.detail = os.str();
  return o;
}

Outcome attention_normalization() {
  std::mt19937_64 rng(4);
  double worst_sum = 0.0, min_weight = 1.0;
  for (int draw = 0; draw < kAttentionDraws; ++draw) {
    ad::Tape t;
    const Matrix x = randn(3, 5, rng, 3.0), e = randn(3, 2, rng);
    const auto tr = temporal_attention(t.constant(x), t.constant(randn(6, 6, rng, 3.0)), t.constant(randn(6, 1, rng, 3.0)));
    const auto sr = spatial_attention(t.constant(x), t.constant(e), t.constant(randn(6, 14, rng, 3.0)),
                                      t.constant(randn(6, 1, rng, 3.0)), t.constant(randn(7, 5, rng)),
                                      t.constant(randn(1, 5, rng)));
    for (const Matrix& alpha : {tr.weights.value(), sr.weights.value()}) {
      worst_sum = std::max(worst_sum, (alpha.rowwise().sum().array() - 1.0).abs().maxCoeff());
      min_weight = std::min(min_weight, alpha.minCoeff());
    }
  }
  std::ostringstream os;
  os << kAttentionDraws << " draws, max |row sum - 1| = " << worst_sum << ", min weight = " << min_weight;
  return {worst_sum <= kAlphaTol && min_weight >= 0.0, os.str()};
}

Outcome momentum_contraction() {
  std::mt19937_64 rng(7);
  MomentumEmbedding m(randn(2, 4, rng), 0.9);
  const Vector v = randn(4, 1, rng);
  double prev = (m.state().row(0).transpose() - v).norm(), worst = 0.0;
  for (int step = 0; step < kContractionSteps; ++step) {
    m.update_temporal({{0, {Vector::Zero(3)}}}, [&](const Vector&) { return v; });
    const double d = (m.state().row(0).transpose() - v).norm();
    worst = std::max(worst, std::abs(d / prev - kContraction));
    prev = d;
  }
  std::ostringstream os;
  os << kContractionSteps << " updates, max |ratio - 0.9| = " << worst;
  return {worst <= kContractionTol, os.str()};
}

Outcome threshold_oracle() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> s(1000);
  for (double& v : s) v = g(rng);
  const std::set<std::size_t> injected{17, 250, 251, 640, 999};
  for (std::size_t k : injected) s[k] = 15.0;
  const double tau = dynamic_threshold(s);
  std::set<std::size_t> flagged;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] > tau) flagged.insert(k);
  }
  const auto ref = oracle::threshold(s);
  std::ostringstream os;
  os << "tau=" << tau << " (brute force " << ref.tau << "), flagged " << flagged.size() << " of 5 injected";
  return {flagged == injected && ref.flagged == injected, os.str()};
}

// End-to-end run through the command layer: generate, train, score the test split.
struct BenchRun {
  double test_rmse = 0.0;
  double f1 = 0.0;
  double seconds = 0.0;
};

RunConfig bench_config(std::uint64_t seed) {
  RunConfig c;
  c.train.seed = seed;
  return c;
}

std::string data_dir(const fs::path& root, const std::string& tag) { return (root / tag / "data").string(); }

RunConfig with_data(RunConfig c, const fs::path& root, const std::string& tag) {
  c.output_dir = data_dir(root, tag);
  const GenerateResult g = cmd_generate(c);
  c.data_path = g.panel_path;
  c.graph_path = g.graph_path;
  c.labels_path = g.labels_path;
  return c;
}

BenchRun bench_run(RunConfig c, const fs::path& out, const std::string& label) {
  const auto t0 = std::chrono::steady_clock::now();
  c.output_dir = out.string();
  std::cerr << "  training " << label << " (" << c.train.n_epoch << " epochs)\n";
  const TrainOutcome o = cmd_train(c);
  const WindowSet w = make_windows(o.result.panel, o.split, c.train.model.window);
  BenchRun r;
  r.test_rmse = evaluate(o.result.model, o.result.panel, w.test, SplitKind::test).rmse;
  r.f1 = o.detection ? o.detection->f1 : 0.0;
  r.seconds = seconds_since(t0);
  std::cerr << "    test_rmse=" << r.test_rmse << " f1=" << r.f1 << " " << r.seconds << " s\n";
  return r;
}

struct Benchmarks {
  std::map<std::uint64_t, BenchRun> ead, plain;
  std::map<double, BenchRun> by_delta;  // first seed only
  std::map<std::uint64_t, RunConfig> data;
};

Outcome detection_quality_default(Benchmarks& b, const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = kSeeds.front();
  b.data[seed] = with_data(bench_config(seed), root, "seed" + std::to_string(seed));
  b.ead[seed] = bench_run(b.data[seed], root / ("seed" + std::to_string(seed)) / "ead", "default benchmark");
  b.by_delta[b.data[seed].train.ead.delta] = b.ead[seed];
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "cumulative F1=" << b.ead[seed].f1 << " (min " << kF1Min << ") in " << secs << " s";
  return {b.ead[seed].f1 >= kF1Min && secs < kDetectSeconds, os.str()};
}

Outcome ead_beats_plain(Benchmarks& b, const fs::path& root) {
  int wins = 0;
  std::ostringstream os;
  for (std::uint64_t seed : kSeeds) {
    const std::string tag = "seed" + std::to_string(seed);
    if (!b.data.contains(seed)) b.data[seed] = with_data(bench_config(seed), root, tag);
    if (!b.ead.contains(seed)) b.ead[seed] = bench_run(b.data[seed], root / tag / "ead", tag + " with EAD");
    RunConfig plain = b.data[seed];
    plain.train.ead.enabled = false;
    b.plain[seed] = bench_run(plain, root / tag / "plain", tag + " without EAD");
    const bool win = b.ead[seed].test_rmse < b.plain[seed].test_rmse;
    wins += win;
    os << "seed " << seed << ": " << b.ead[seed].test_rmse << " vs " << b.plain[seed].test_rmse << (win ? " (win)" : "")
       << "; ";
  }
  os << wins << "/" << kSeeds.size() << " seeds";
  return {2 * wins > static_cast<int>(kSeeds.size()), os.str()};
}

Outcome delta_mixture(Benchmarks& b, const fs::path& root) {
  const std::uint64_t seed = kSeeds.front();
  for (double d : {0.0, 1.0}) {
    RunConfig c = b.data.at(seed);
    c.train.ead.delta = d;
    std::ostringstream tag;
    tag << "delta" << d;
    b.by_delta[d] = bench_run(c, root / ("seed" + std::to_string(seed)) / tag.str(), tag.str());
  }
  const double mixed = b.by_delta.at(0.5).f1, best_single = std::max(b.by_delta.at(0.0).f1, b.by_delta.at(1.0).f1);
  std::ostringstream os;
  os << "F1(0.5)=" << mixed << " F1(0)=" << b.by_delta.at(0.0).f1 << " F1(1)=" << b.by_delta.at(1.0).f1
     << " slack " << kDeltaSlack;
  return {mixed >= best_single - kDeltaSlack, os.str()};
}

Outcome periodic_fill(const fs::path& root) {
  RunConfig c = bench_config(kSeeds.front());
  c.synthetic.noise_scale = 0.1;
  c.synthetic.trend_scale = 0.0;
  c = with_data(c, root, "periodic");
  std::map<FillStrategy, BenchRun> runs;
  for (FillStrategy f : {FillStrategy::periodic_mean, FillStrategy::remove}) {
    RunConfig fc = c;
    fc.train.ead.fill = f;
    runs[f] = bench_run(fc, root / "periodic" / to_string(f), std::string("periodic panel, fill=") + to_string(f));
  }
  const double pm = runs.at(FillStrategy::periodic_mean).test_rmse, rm = runs.at(FillStrategy::remove).test_rmse;
  std::ostringstream os;
  os << "test RMSE periodic_mean=" << pm << " remove=" << rm;
  return {pm <= rm, os.str()};
}

std::size_t csv_rows(const fs::path& path, std::string* header) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line); ++n) {
    if (n == 0 && header) *header = line;
  }
  return n == 0 ? 0 : n - 1;
}

Outcome ablation_harness(Benchmarks& b, const fs::path& root) {
  RunConfig c = b.data.at(kSeeds.front());
  c.ablate_epochs = kAblateEpochs;
  c.output_dir = (root / "ablation").string();
  std::cerr << "  ablation arms (" << kAblateEpochs << " epochs each)\n";
  const AblationOutcome o = cmd_ablate(c, [](const ArmResult& a) {
    std::cerr << "    " << a.section << " / " << a.arm << " rmse=" << a.rmse << "\n";
  });
  double full = std::numeric_limits<double>::quiet_NaN();
  std::size_t without = 0, deltas = 0, changed = 0;
  std::set<double> delta_metrics;
  for (const auto& a : o.ablation) {
    if (a.arm == "full") full = a.rmse;
    if (a.section == "delta") {
      ++deltas;
      delta_metrics.insert(a.rmse);
    }
  }
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& a : o.ablation) {
    if (a.arm.rfind("w/o ", 0) != 0) continue;
    ++without;
    const double diff = std::abs(a.rmse - full);
    smallest = std::min(smallest, diff);
    changed += diff > kArmDiff;
  }
  std::string header;
  const std::size_t rows = csv_rows(fs::path(c.output_dir) / "ablation.csv", &header);
  std::ostringstream os;
  os << without << " w/o arms (" << changed << " differ from full by > " << kArmDiff << ", smallest " << smallest
     << "), " << deltas << " delta arms (" << delta_metrics.size() << " distinct RMSE), " << rows << " CSV rows";
  const bool pass = without == 5 && changed == 5 && deltas == delta_grid().size() && delta_metrics.size() > 1 &&
                    rows == o.ablation.size() &&
                    header == "section,arm,rmse,mae,detection_f1" &&
                    csv_rows(fs::path(c.output_dir) / "comparison.csv", nullptr) == o.comparison.size();
  return {pass, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path root = fs::temp_directory_path() / "stts_acceptance";
  for (int k = 1; k < argc; ++k) {
    const std::string arg = argv[k];
    if (arg == "--workdir" && k + 1 < argc) {
      root = argv[++k];
    } else {
      std::cerr << "usage: stts_acceptance [--workdir DIR]\n";
      return 2;
    }
  }
  fs::remove_all(root);
  fs::create_directories(root);

  Benchmarks bench;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"unit examples", [&] { return unit_examples(root / "unit"); }},
      {"gradient suite", gradient_suite},
      {"attention normalization", attention_normalization},
      {"momentum contraction", momentum_contraction},
      {"threshold oracle", threshold_oracle},
      {"detection quality", [&] { return detection_quality_default(bench, root); }},
      {"EAD improves test RMSE", [&] { return ead_beats_plain(bench, root); }},
      {"mixed residual score", [&] { return delta_mixture(bench, root); }},
      {"periodic fill", [&] { return periodic_fill(root); }},
      {"ablation harness", [&] { return ablation_harness(bench, root); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " C" << k + 1 << " " << criteria[k].first << ": " << o.detail
              << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed;
}
