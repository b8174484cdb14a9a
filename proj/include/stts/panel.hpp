#pragma once

// Multivariate series panel: N series over T shared timestamps, with optional
// entity graph and (for synthetic data) ground-truth anomaly labels.

#include <cmath>
#include <compare>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stts/error.hpp"

namespace stts {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Position {
  std::size_t series = 0;
  std::size_t timestamp = 0;

  auto operator<=>(const Position&) const = default;
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

struct SeriesPanel {
  Matrix values;                          // N × T; z-normalized once norm_stats is set
  std::vector<std::string> series_ids;
  std::optional<Matrix> graph;            // N × N, symmetric, zero diagonal
  std::vector<NormStats> norm_stats;      // empty while values are raw
  std::optional<BoolMatrix> anomaly_labels;

  std::size_t n_series() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_timestamps() const { return static_cast<std::size_t>(values.cols()); }
  bool normalized() const { return !norm_stats.empty(); }

  double& at(std::size_t i, std::size_t t) {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
  }
  double at(std::size_t i, std::size_t t) const {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
  }

  double denormalize(std::size_t i, double v) const {
    return normalized() ? v * norm_stats[i].std + norm_stats[i].mean : v;
  }
  double normalize(std::size_t i, double v) const {
    return normalized() ? (v - norm_stats[i].mean) / norm_stats[i].std : v;
  }

  // Values in original units.
  Matrix raw_values() const {
    Matrix out = values;
    if (!normalized()) return out;
    for (std::size_t i = 0; i < n_series(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      out.row(r) = (values.row(r).array() * norm_stats[i].std + norm_stats[i].mean).matrix();
    }
    return out;
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < series_ids.size(); ++i) {
      if (series_ids[i] == id) return i;
    }
    throw Error(ErrorKind::invalid_argument, "unknown series id '" + id + "'");
  }
};

// Chronological split boundaries (exclusive ends). Label timestamps of
// training samples lie in [P, train_end).
struct SplitSpec {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  std::size_t test_end = 0;

  void validate(std::size_t window, std::size_t n_timestamps) const {
    require(window < train_end && train_end < valid_end && valid_end < test_end &&
                test_end <= n_timestamps,
            ErrorKind::invalid_argument,
            "split must satisfy P < train_end < valid_end < test_end <= T");
  }
};

inline SplitSpec split_by_fraction(std::size_t n_timestamps, double train_fraction,
                                   double valid_fraction) {
  require(train_fraction > 0.0 && valid_fraction > 0.0 && train_fraction + valid_fraction < 1.0,
          ErrorKind::invalid_argument, "split fractions must be positive and sum below 1");
  const auto T = static_cast<double>(n_timestamps);
  SplitSpec s;
  s.train_end = static_cast<std::size_t>(std::llround(T * train_fraction));
  s.valid_end = static_cast<std::size_t>(std::llround(T * (train_fraction + valid_fraction)));
  s.test_end = n_timestamps;
  return s;
}

// Per-series z-score using statistics over timestamps [0, stats_end).
inline void normalize(SeriesPanel& panel, std::size_t stats_end) {
  require(!panel.normalized(), ErrorKind::invalid_argument, "panel is already normalized");
  require(stats_end >= 2 && stats_end <= panel.n_timestamps(), ErrorKind::invalid_argument,
          "normalization range must cover at least two timestamps");
  std::vector<NormStats> stats(panel.n_series());
  for (std::size_t i = 0; i < panel.n_series(); ++i) {
    const auto row = panel.values.row(static_cast<Eigen::Index>(i)).head(
        static_cast<Eigen::Index>(stats_end));
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    require(sd > 1e-12 * std::max(1.0, std::abs(mean)), ErrorKind::invalid_argument,
            "constant series '" + panel.series_ids[i] + "'");
    stats[i] = {mean, sd};
  }
  for (std::size_t i = 0; i < panel.n_series(); ++i) {
    auto r = panel.values.row(static_cast<Eigen::Index>(i));
    r = ((r.array() - stats[i].mean) / stats[i].std).matrix();
  }
  panel.norm_stats = std::move(stats);
}

// Applies previously computed statistics (one entry per series).
inline void apply_normalization(SeriesPanel& panel, const std::vector<NormStats>& stats) {
  require(!panel.normalized(), ErrorKind::invalid_argument, "panel is already normalized");
  require(stats.size() == panel.n_series(), ErrorKind::dimension, "normalization stats do not match the series count");
  for (std::size_t i = 0; i < panel.n_series(); ++i) {
    require(stats[i].std > 0.0, ErrorKind::invalid_argument, "normalization std must be positive");
    auto r = panel.values.row(static_cast<Eigen::Index>(i));
    r = ((r.array() - stats[i].mean) / stats[i].std).matrix();
  }
  panel.norm_stats = stats;
}

enum class MissingPolicy { reject, forward_fill };

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    std::size_t start = 0;
    while (start < field.size() && field[start] == ' ') ++start;
    out.push_back(field.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::parse, "malformed number '" + s + "' at " + where);
  }
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::io, "cannot write '" + path + "'");
  out << std::setprecision(17);
  return out;
}

}  // namespace detail

// Panel CSV: header `series_id,t0,t1,...`, one row per series. Returns raw
// (unnormalized) values.
inline SeriesPanel read_panel_csv(const std::string& path,
                                  MissingPolicy policy = MissingPolicy::reject) {
  auto in = detail::open_in(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse, path + ": empty file");
  const auto header = detail::split_csv_line(line);
  require(header.size() >= 2 && header.front() == "series_id", ErrorKind::parse,
          path + ": header must start with series_id");
  const std::size_t T = header.size() - 1;

  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    require(fields.size() == T + 1, ErrorKind::parse,
            path + ":" + std::to_string(line_no) + ": inconsistent series length");
    require(!fields[0].empty(), ErrorKind::parse,
            path + ":" + std::to_string(line_no) + ": empty series id");
    std::vector<double> row(T);
    std::optional<double> last;
    for (std::size_t t = 0; t < T; ++t) {
      const std::string& f = fields[t + 1];
      const std::string where = path + ":" + std::to_string(line_no) + " column " + std::to_string(t + 1);
      if (detail::is_missing(f)) {
        require(policy == MissingPolicy::forward_fill, ErrorKind::parse,
                "missing value at " + where);
        require(last.has_value(), ErrorKind::parse,
                "missing value at " + where + " has no earlier value to carry forward");
        row[t] = *last;
      } else {
        row[t] = detail::parse_double(f, where);
        require(std::isfinite(row[t]), ErrorKind::parse, "non-finite value at " + where);
        last = row[t];
      }
    }
    ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::parse, path + ": no series rows");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      require(ids[i] != ids[j], ErrorKind::parse, path + ": duplicate series id '" + ids[i] + "'");
    }
  }

  SeriesPanel panel;
  panel.series_ids = std::move(ids);
  panel.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(T));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t t = 0; t < T; ++t) panel.at(i, t) = rows[i][t];
  }
  return panel;
}

// Writes values in original units.
inline void write_panel_csv(const std::string& path, const SeriesPanel& panel) {
  auto out = detail::open_out(path);
  out << "series_id";
  for (std::size_t t = 0; t < panel.n_timestamps(); ++t) out << ",t" << t;
  out << '\n';
  const Matrix raw = panel.raw_values();
  for (std::size_t i = 0; i < panel.n_series(); ++i) {
    out << panel.series_ids[i];
    for (std::size_t t = 0; t < panel.n_timestamps(); ++t) {
      out << ',' << raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
    }
    out << '\n';
  }
}

// Edge list `id_a,id_b[,weight]`, undirected, default weight 1.
inline Matrix read_graph_csv(const std::string& path, const std::vector<std::string>& ids) {
  auto in = detail::open_in(path);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix adj = Matrix::Zero(n, n);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (line_no == 1 && f.size() >= 2 && f[0] == "id_a") continue;
    require(f.size() == 2 || f.size() == 3, ErrorKind::parse, where + ": expected id_a,id_b[,weight]");
    const auto a = index.find(f[0]);
    const auto b = index.find(f[1]);
    require(a != index.end() && b != index.end(), ErrorKind::parse,
            where + ": graph id not present in panel");
    const double w = f.size() == 3 ? detail::parse_double(f[2], where) : 1.0;
    require(w >= 0.0 && std::isfinite(w), ErrorKind::parse, where + ": weight must be nonnegative");
    if (a->second == b->second) continue;
    const auto ia = static_cast<Eigen::Index>(a->second), ib = static_cast<Eigen::Index>(b->second);
    adj(ia, ib) = w;
    adj(ib, ia) = w;
  }
  return adj;
}

inline void write_graph_csv(const std::string& path, const SeriesPanel& panel) {
  require(panel.graph.has_value(), ErrorKind::invalid_argument, "panel has no graph");
  auto out = detail::open_out(path);
  const Matrix& g = *panel.graph;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < g.cols(); ++j) {
      if (g(i, j) != 0.0) {
        out << panel.series_ids[static_cast<std::size_t>(i)] << ','
            << panel.series_ids[static_cast<std::size_t>(j)] << ',' << g(i, j) << '\n';
      }
    }
  }
}

inline void write_labels_csv(const std::string& path, const SeriesPanel& panel) {
  require(panel.anomaly_labels.has_value(), ErrorKind::invalid_argument, "panel has no labels");
  auto out = detail::open_out(path);
  out << "series_id,timestamp\n";
  const BoolMatrix& l = *panel.anomaly_labels;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    for (Eigen::Index t = 0; t < l.cols(); ++t) {
      if (l(i, t)) out << panel.series_ids[static_cast<std::size_t>(i)] << ',' << t << '\n';
    }
  }
}

inline BoolMatrix read_labels_csv(const std::string& path, const SeriesPanel& panel) {
  auto in = detail::open_in(path);
  BoolMatrix labels = BoolMatrix::Constant(static_cast<Eigen::Index>(panel.n_series()),
                                           static_cast<Eigen::Index>(panel.n_timestamps()), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (line_no == 1 && !f.empty() && f[0] == "series_id") continue;
    const std::string where = path + ":" + std::to_string(line_no);
    require(f.size() == 2, ErrorKind::parse, where + ": expected series_id,timestamp");
    const std::size_t i = panel.index_of(f[0]);
    const double t = detail::parse_double(f[1], where);
    require(t >= 0 && t < static_cast<double>(panel.n_timestamps()) && t == std::floor(t),
            ErrorKind::parse, where + ": timestamp out of range");
    labels(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = true;
  }
  return labels;
}

struct LoadOptions {
  MissingPolicy missing = MissingPolicy::reject;
  double train_fraction = 0.7;  // normalization statistics use the training range only
};

// Reads a panel (and optional graph) and z-normalizes it on its training range.
inline SeriesPanel load_panel(const std::string& path, const std::optional<std::string>& graph_path,
                              const LoadOptions& options = {}) {
  SeriesPanel panel = read_panel_csv(path, options.missing);
  if (graph_path.has_value() && !graph_path->empty()) {
    panel.graph = read_graph_csv(*graph_path, panel.series_ids);
  }
  const auto stats_end = static_cast<std::size_t>(
      std::llround(static_cast<double>(panel.n_timestamps()) * options.train_fraction));
  normalize(panel, std::max<std::size_t>(2, std::min(stats_end, panel.n_timestamps())));
  return panel;
}

}  // namespace stts
