#pragma once

// Flat run configuration: `key = value` lines ('#' starts a comment).
// Unknown keys and out-of-range values are rejected when they are set.

#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stts/baselines.hpp"
#include "stts/synthetic.hpp"
#include "stts/trainer.hpp"

namespace stts {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<AnomalySpec> parse_anomalies(const std::string& text) {
  std::vector<AnomalySpec> out;
  if (trim(text).empty() || trim(text) == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto c1 = item.find(':');
    const auto c2 = c1 == std::string::npos ? std::string::npos : item.find(':', c1 + 1);
    require(c2 != std::string::npos, ErrorKind::config, "anomaly entry '" + item + "' must be kind:magnitude:count");
    AnomalySpec a;
    const std::string kind = item.substr(0, c1);
    if (kind == "spike") a.kind = AnomalyKind::spike;
    else if (kind == "dip") a.kind = AnomalyKind::dip;
    else if (kind == "level_shift") a.kind = AnomalyKind::level_shift;
    else throw Error(ErrorKind::config, "unknown anomaly kind '" + kind + "'");
    try {
      a.magnitude = std::stod(item.substr(c1 + 1, c2 - c1 - 1));
      a.count = std::stoull(item.substr(c2 + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "anomaly entry '" + item + "' has a malformed number");
    }
    require(a.magnitude >= 0.0, ErrorKind::config, "anomaly magnitude must be nonnegative");
    out.push_back(a);
  }
  return out;
}

inline std::string format_anomalies(const std::vector<AnomalySpec>& specs) {
  if (specs.empty()) return "none";
  std::ostringstream os;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    os << (k ? "," : "") << to_string(specs[k].kind) << ':' << specs[k].magnitude << ':' << specs[k].count;
  }
  return os.str();
}

struct RunConfig {
  // data and outputs
  std::string data_path;
  std::string graph_path;
  std::string labels_path;
  std::string output_dir = "out";
  std::string checkpoint;
  std::string missing = "reject";
  double train_fraction = 0.7;
  double valid_fraction = 0.1;

  SyntheticSpec synthetic = [] {
    SyntheticSpec s;
    s.anomalies = {{AnomalyKind::spike, 6.0, 28}, {AnomalyKind::dip, 6.0, 28}};
    return s;
  }();

  TrainConfig train = [] {
    TrainConfig t;
    t.n_epoch = 30;
    return t;
  }();

  double ewma_alpha = 0.1;
  double ewma_k = 3.0;
  int ablate_epochs = 0;  // 0 keeps n_epoch for every ablation arm

  MissingPolicy missing_policy() const {
    return missing == "forward_fill" ? MissingPolicy::forward_fill : MissingPolicy::reject;
  }

  SplitSpec split(std::size_t n_timestamps) const {
    return split_by_fraction(n_timestamps, train_fraction, valid_fraction);
  }

  CleanOptions clean_options(std::size_t train_end) const {
    CleanOptions o;
    o.limit = train_end;
    o.fill = train.ead.fill;
    o.fill_params = train.ead.fill_params;
    return o;
  }

  void set(const std::string& key, const std::string& value) {
    auto& f = fields();
    const auto it = f.find(key);
    require(it != f.end(), ErrorKind::config, "unknown config key '" + key + "'");
    it->second.set(*this, trim(value));
  }

  std::string get(const std::string& key) const {
    const auto& f = fields();
    const auto it = f.find(key);
    require(it != f.end(), ErrorKind::config, "unknown config key '" + key + "'");
    return it->second.get(*this);
  }

  // "key=value" assignment as given on a command line.
  void apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, ErrorKind::config, "expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open config '" + path + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      if (trim(line).empty()) continue;
      try {
        apply(line);
      } catch (const Error& e) {
        throw Error(e.kind(), path + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, f] : fields()) out[k] = f.get(*this);
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), ErrorKind::io, "cannot write '" + path + "'");
    for (const auto& [k, v] : to_map()) out << k << " = " << v << '\n';
  }

  // Cross-field checks that a single assignment cannot see.
  void validate() const {
    require(train_fraction + valid_fraction < 1.0, ErrorKind::config,
            "train_fraction + valid_fraction must be below 1");
    require(train.model.n_aux <= synthetic.n_series || !data_path.empty(), ErrorKind::config,
            "n_aux exceeds n_series");
    train.validate();
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }

 private:
  struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
  };

  // Shortest text that parses back to the same double.
  static std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }

  template <class T>
  static T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    require(ec == std::errc() && p == end, ErrorKind::config, key + ": '" + v + "' is not a valid number");
    return out;
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error(ErrorKind::config, key + ": '" + v + "' is not a boolean");
  }

  static Field size_field(std::string key, std::size_t lo, std::size_t hi, std::size_t& (*ref)(RunConfig&)) {
    return {[key, lo, hi, ref](RunConfig& c, const std::string& v) {
              const auto x = parse_number<std::size_t>(key, v);
              require(x >= lo && x <= hi, ErrorKind::config,
                      key + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
              ref(c) = x;
            },
            [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
  }

  static Field int_field(std::string key, int lo, int hi, int& (*ref)(RunConfig&)) {
    return {[key, lo, hi, ref](RunConfig& c, const std::string& v) {
              const auto x = parse_number<int>(key, v);
              require(x >= lo && x <= hi, ErrorKind::config,
                      key + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
              ref(c) = x;
            },
            [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
  }

  // Closed range [lo, hi]; open_lo excludes lo.
  static Field real_field(std::string key, double lo, double hi, bool open_lo, double& (*ref)(RunConfig&)) {
    return {[key, lo, hi, open_lo, ref](RunConfig& c, const std::string& v) {
              double x = 0.0;
              try {
                std::size_t used = 0;
                x = std::stod(v, &used);
                require(used == v.size(), ErrorKind::config, "");
              } catch (const std::exception&) {
                throw Error(ErrorKind::config, key + ": '" + v + "' is not a valid number");
              }
              require(std::isfinite(x) && (open_lo ? x > lo : x >= lo) && x <= hi, ErrorKind::config,
                      key + " must lie in " + (open_lo ? "(" : "[") + fmt(lo) + ", " + fmt(hi) + "]");
              ref(c) = x;
            },
            [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); }};
  }

  static Field bool_field(std::string key, bool& (*ref)(RunConfig&)) {
    return {[key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); },
            [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
  }

  static Field string_field(std::string& (*ref)(RunConfig&)) {
    return {[ref](RunConfig& c, const std::string& v) { ref(c) = v; },
            [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
  }

  static const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
      constexpr double inf = std::numeric_limits<double>::infinity();
      constexpr std::size_t big = 1'000'000;
      std::map<std::string, Field> f;
      f["data_path"] = string_field([](RunConfig& c) -> std::string& { return c.data_path; });
      f["graph_path"] = string_field([](RunConfig& c) -> std::string& { return c.graph_path; });
      f["labels_path"] = string_field([](RunConfig& c) -> std::string& { return c.labels_path; });
      f["output_dir"] = string_field([](RunConfig& c) -> std::string& { return c.output_dir; });
      f["checkpoint"] = string_field([](RunConfig& c) -> std::string& { return c.checkpoint; });
      f["missing"] = {[](RunConfig& c, const std::string& v) {
                        require(v == "reject" || v == "forward_fill", ErrorKind::config,
                                "missing must be reject or forward_fill");
                        c.missing = v;
                      },
                      [](const RunConfig& c) { return c.missing; }};
      f["train_fraction"] = real_field("train_fraction", 0.0, 1.0, true, [](RunConfig& c) -> double& { return c.train_fraction; });
      f["valid_fraction"] = real_field("valid_fraction", 0.0, 1.0, true, [](RunConfig& c) -> double& { return c.valid_fraction; });

      f["n_series"] = size_field("n_series", 1, big, [](RunConfig& c) -> std::size_t& { return c.synthetic.n_series; });
      f["n_timestamps"] = size_field("n_timestamps", 4, big, [](RunConfig& c) -> std::size_t& { return c.synthetic.n_timestamps; });
      f["period"] = size_field("period", 1, big, [](RunConfig& c) -> std::size_t& { return c.synthetic.period; });
      f["n_communities"] = size_field("n_communities", 1, big, [](RunConfig& c) -> std::size_t& { return c.synthetic.n_communities; });
      f["seasonal_scale"] = real_field("seasonal_scale", 0.0, inf, false, [](RunConfig& c) -> double& { return c.synthetic.seasonal_scale; });
      f["trend_scale"] = real_field("trend_scale", 0.0, inf, false, [](RunConfig& c) -> double& { return c.synthetic.trend_scale; });
      f["noise_scale"] = real_field("noise_scale", 0.0, inf, false, [](RunConfig& c) -> double& { return c.synthetic.noise_scale; });
      f["cross_corr_strength"] = real_field("cross_corr_strength", 0.0, 1.0, false, [](RunConfig& c) -> double& { return c.synthetic.cross_corr_strength; });
      f["with_graph"] = bool_field("with_graph", [](RunConfig& c) -> bool& { return c.synthetic.with_graph; });
      f["p_in"] = real_field("p_in", 0.0, 1.0, false, [](RunConfig& c) -> double& { return c.synthetic.p_in; });
      f["p_out"] = real_field("p_out", 0.0, 1.0, false, [](RunConfig& c) -> double& { return c.synthetic.p_out; });
      f["anomaly_margin"] = size_field("anomaly_margin", 0, big, [](RunConfig& c) -> std::size_t& { return c.synthetic.anomaly_margin; });
      f["level_shift_length"] = size_field("level_shift_length", 1, big, [](RunConfig& c) -> std::size_t& { return c.synthetic.level_shift_length; });
      f["anomalies"] = {[](RunConfig& c, const std::string& v) { c.synthetic.anomalies = parse_anomalies(v); },
                        [](const RunConfig& c) { return format_anomalies(c.synthetic.anomalies); }};

      f["window"] = size_field("window", 1, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.window; });
      f["n_aux"] = size_field("n_aux", 1, big, [](RunConfig& c) -> std::size_t& { return c.train.model.n_aux; });
      f["d_time"] = size_field("d_time", 1, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.d_time; });
      f["d_spat"] = size_field("d_spat", 0, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.d_spat; });
      f["d_att"] = size_field("d_att", 1, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.d_att; });
      f["encoder_hidden"] = size_field("encoder_hidden", 1, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.encoder_hidden; });
      f["hidden"] = size_field("hidden", 1, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.hidden; });
      f["heads"] = size_field("heads", 1, 64, [](RunConfig& c) -> std::size_t& { return c.train.model.heads; });
      f["ffn_hidden"] = size_field("ffn_hidden", 1, 4096, [](RunConfig& c) -> std::size_t& { return c.train.model.ffn_hidden; });
      f["gamma"] = real_field("gamma", 0.0, 1.0, false, [](RunConfig& c) -> double& { return c.train.model.gamma; });
      f["leaky_slope"] = real_field("leaky_slope", 0.0, 0.999, false, [](RunConfig& c) -> double& { return c.train.model.leaky_slope; });
      f["use_selection"] = bool_field("use_selection", [](RunConfig& c) -> bool& { return c.train.model.use_selection; });
      f["use_temporal_attention"] = bool_field("use_temporal_attention", [](RunConfig& c) -> bool& { return c.train.model.use_temporal_attention; });
      f["use_spatial_attention"] = bool_field("use_spatial_attention", [](RunConfig& c) -> bool& { return c.train.model.use_spatial_attention; });
      f["use_transformer"] = bool_field("use_transformer", [](RunConfig& c) -> bool& { return c.train.model.use_transformer; });
      f["use_recurrent"] = bool_field("use_recurrent", [](RunConfig& c) -> bool& { return c.train.model.use_recurrent; });

      f["beta"] = real_field("beta", 0.0, 1.0, false, [](RunConfig& c) -> double& { return c.train.beta; });
      f["lr"] = real_field("lr", 0.0, 10.0, true, [](RunConfig& c) -> double& { return c.train.adam.lr; });
      f["grad_clip"] = real_field("grad_clip", 0.0, inf, false, [](RunConfig& c) -> double& { return c.train.adam.clip_norm; });
      f["batch_size"] = size_field("batch_size", 1, big, [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
      f["n_epoch"] = int_field("n_epoch", 0, 100000, [](RunConfig& c) -> int& { return c.train.n_epoch; });
      f["seed"] = {[](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
                   [](const RunConfig& c) { return std::to_string(c.train.seed); }};

      f["ead"] = bool_field("ead", [](RunConfig& c) -> bool& { return c.train.ead.enabled; });
      f["eta"] = int_field("eta", 1, 100000, [](RunConfig& c) -> int& { return c.train.ead.eta; });
      f["ead_offset"] = int_field("ead_offset", 0, 100000, [](RunConfig& c) -> int& { return c.train.ead.offset; });
      f["delta"] = real_field("delta", 0.0, 1.0, false, [](RunConfig& c) -> double& { return c.train.ead.delta; });
      f["fill"] = {[](RunConfig& c, const std::string& v) { c.train.ead.fill = parse_fill_strategy(v); },
                   [](const RunConfig& c) { return std::string(to_string(c.train.ead.fill)); }};
      f["fill_k"] = size_field("fill_k", 1, big, [](RunConfig& c) -> std::size_t& { return c.train.ead.fill_params.k; });
      f["lowess_span"] = size_field("lowess_span", 1, big, [](RunConfig& c) -> std::size_t& { return c.train.ead.fill_params.lowess_span; });
      f["fill_period"] = size_field("fill_period", 1, big, [](RunConfig& c) -> std::size_t& { return c.train.ead.fill_params.period; });
      f["threshold_mode"] = {[](RunConfig& c, const std::string& v) { c.train.ead.mode = parse_threshold_mode(v); },
                             [](const RunConfig& c) { return std::string(to_string(c.train.ead.mode)); }};
      f["z_min"] = real_field("z_min", 0.0, 100.0, true, [](RunConfig& c) -> double& { return c.train.ead.threshold.z_min; });
      f["z_max"] = real_field("z_max", 0.0, 100.0, true, [](RunConfig& c) -> double& { return c.train.ead.threshold.z_max; });
      f["z_step"] = real_field("z_step", 0.0, 100.0, true, [](RunConfig& c) -> double& { return c.train.ead.threshold.z_step; });
      f["prune"] = bool_field("prune", [](RunConfig& c) -> bool& { return c.train.ead.threshold.prune; });
      f["prune_ratio"] = real_field("prune_ratio", 0.0, 0.999, true, [](RunConfig& c) -> double& { return c.train.ead.threshold.prune_ratio; });

      f["ewma_alpha"] = real_field("ewma_alpha", 0.0, 1.0, true, [](RunConfig& c) -> double& { return c.ewma_alpha; });
      f["ewma_k"] = real_field("ewma_k", 0.0, inf, true, [](RunConfig& c) -> double& { return c.ewma_k; });
      f["ablate_epochs"] = int_field("ablate_epochs", 0, 100000, [](RunConfig& c) -> int& { return c.ablate_epochs; });
      return f;
    }();
    return table;
  }
};

}  // namespace stts
