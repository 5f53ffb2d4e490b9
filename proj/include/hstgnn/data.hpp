#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hstgnn/tensor.hpp"

namespace hstgnn {

enum class SensorType { Flow, Temperature, Pressure };
enum class Role { Input, Target };

/// Branch order used by every model: temperature, pressure, flow.
inline constexpr std::array<SensorType, 3> kBranchOrder = {SensorType::Temperature, SensorType::Pressure,
                                                           SensorType::Flow};

inline char type_code(SensorType t) {
  switch (t) {
    case SensorType::Flow: return 'F';
    case SensorType::Temperature: return 'T';
    case SensorType::Pressure: return 'P';
  }
  return '?';
}

inline std::string type_name(SensorType t) {
  switch (t) {
    case SensorType::Flow: return "flow";
    case SensorType::Temperature: return "temperature";
    case SensorType::Pressure: return "pressure";
  }
  return "?";
}

inline SensorType parse_type(const std::string& s) {
  if (s == "F") return SensorType::Flow;
  if (s == "T") return SensorType::Temperature;
  if (s == "P") return SensorType::Pressure;
  throw DataError("unknown sensor kind '" + s + "' (expected F, T or P)");
}

inline Role parse_role(const std::string& s) {
  if (s == "input") return Role::Input;
  if (s == "target") return Role::Target;
  throw DataError("unknown sensor role '" + s + "' (expected input or target)");
}

inline std::string role_name(Role r) { return r == Role::Input ? "input" : "target"; }

struct SensorMeta {
  std::string id;
  SensorType kind;
  Role role;
  std::string unit;

  bool operator==(const SensorMeta&) const = default;
};

/// Ordered sensor list. Inputs keep their relative order; `type_indices`
/// returns positions within the input ordering (0..N-1).
class SensorNetworkSchema {
 public:
  SensorNetworkSchema() = default;
  explicit SensorNetworkSchema(std::vector<SensorMeta> sensors) : sensors_(std::move(sensors)) {
    std::set<std::string> seen;
    for (std::size_t k = 0; k < sensors_.size(); ++k) {
      const auto& s = sensors_[k];
      if (!seen.insert(s.id).second) throw DataError("duplicate sensor id '" + s.id + "'");
      if (s.role == Role::Input) {
        by_type_[static_cast<std::size_t>(s.kind)].push_back(static_cast<int>(inputs_.size()));
        inputs_.push_back(static_cast<int>(k));
      } else {
        targets_.push_back(static_cast<int>(k));
      }
    }
  }

  const std::vector<SensorMeta>& sensors() const { return sensors_; }
  const SensorMeta& input(int i) const { return sensors_[static_cast<std::size_t>(inputs_[static_cast<std::size_t>(i)])]; }
  const SensorMeta& target(int j) const { return sensors_[static_cast<std::size_t>(targets_[static_cast<std::size_t>(j)])]; }

  /// Row positions (in `sensors()`) of inputs and targets.
  const std::vector<int>& input_rows() const { return inputs_; }
  const std::vector<int>& target_rows() const { return targets_; }

  int n_inputs() const { return static_cast<int>(inputs_.size()); }
  int d_out() const { return static_cast<int>(targets_.size()); }
  int count(SensorType t) const { return static_cast<int>(by_type_[static_cast<std::size_t>(t)].size()); }
  int n_temp() const { return count(SensorType::Temperature); }
  int n_press() const { return count(SensorType::Pressure); }
  int n_flow() const { return count(SensorType::Flow); }
  const std::vector<int>& type_indices(SensorType t) const { return by_type_[static_cast<std::size_t>(t)]; }

  /// Sensor types that have at least one input, in branch order.
  std::vector<SensorType> present_types() const {
    std::vector<SensorType> out;
    for (SensorType t : kBranchOrder)
      if (count(t) > 0) out.push_back(t);
    return out;
  }

  /// Same schema with every input of type `t` removed.
  SensorNetworkSchema without(SensorType t) const {
    std::vector<SensorMeta> kept;
    for (const auto& s : sensors_)
      if (!(s.role == Role::Input && s.kind == t)) kept.push_back(s);
    return SensorNetworkSchema(std::move(kept));
  }

  int find(const std::string& id) const {
    for (std::size_t k = 0; k < sensors_.size(); ++k)
      if (sensors_[k].id == id) return static_cast<int>(k);
    return -1;
  }

  bool operator==(const SensorNetworkSchema& o) const { return sensors_ == o.sensors_; }

 private:
  std::vector<SensorMeta> sensors_;
  std::vector<int> inputs_;
  std::vector<int> targets_;
  std::array<std::vector<int>, 3> by_type_;
};

/// One operating condition. `values` is [sensors x T_len] in schema order.
struct TimeSeriesDataset {
  SensorNetworkSchema schema;
  Mat values;
  double sample_period = 2.0;
  std::string condition_label;

  Eigen::Index length() const { return values.cols(); }

  Mat inputs() const {
    Mat m(schema.n_inputs(), values.cols());
    for (int i = 0; i < schema.n_inputs(); ++i) m.row(i) = values.row(schema.input_rows()[static_cast<std::size_t>(i)]);
    return m;
  }
  Mat targets() const {
    Mat m(schema.d_out(), values.cols());
    for (int j = 0; j < schema.d_out(); ++j) m.row(j) = values.row(schema.target_rows()[static_cast<std::size_t>(j)]);
    return m;
  }

  void validate() const {
    if (values.rows() != static_cast<Eigen::Index>(schema.sensors().size()))
      throw DataError("dataset has " + std::to_string(values.rows()) + " rows for " +
                      std::to_string(schema.sensors().size()) + " sensors");
    for (Eigen::Index c = 0; c < values.cols(); ++c)
      for (Eigen::Index r = 0; r < values.rows(); ++r)
        if (!std::isfinite(values(r, c)))
          throw DataError("non-finite value for sensor '" + schema.sensors()[static_cast<std::size_t>(r)].id +
                          "' at step " + std::to_string(c));
  }

  /// Columns [start, start + count).
  TimeSeriesDataset slice(Eigen::Index start, Eigen::Index count) const {
    if (start < 0 || count < 0 || start + count > values.cols()) throw DataError("dataset slice out of range");
    return {schema, values.middleCols(start, count), sample_period, condition_label};
  }

  /// Drops every input sensor of type `t` (values and schema).
  TimeSeriesDataset without(SensorType t) const {
    TimeSeriesDataset d{schema.without(t), Mat(), sample_period, condition_label};
    d.values.resize(static_cast<Eigen::Index>(d.schema.sensors().size()), values.cols());
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < schema.sensors().size(); ++k) {
      const auto& s = schema.sensors()[k];
      if (s.role == Role::Input && s.kind == t) continue;
      d.values.row(r++) = values.row(static_cast<Eigen::Index>(k));
    }
    return d;
  }
};

struct NormStats {
  Vec mu;            // per input sensor
  Vec sigma;         // per input sensor, >= kMinSigma
  Vec target_mu;     // per target
  Vec target_sigma;  // per target, >= kMinSigma
};

inline constexpr double kMinSigma = 1e-8;

namespace detail {

inline void moments(const std::vector<const Mat*>& parts, Eigen::Index rows, Vec& mu, Vec& sigma) {
  mu = Vec::Zero(rows);
  sigma = Vec::Zero(rows);
  double n = 0.0;
  for (const Mat* p : parts) {
    mu += p->rowwise().sum();
    n += static_cast<double>(p->cols());
  }
  mu /= n;
  for (const Mat* p : parts) sigma += (p->colwise() - mu).array().square().matrix().rowwise().sum();
  sigma = (sigma / n).cwiseSqrt().cwiseMax(kMinSigma);
}

}  // namespace detail

/// Population mean/std of every input and target over the concatenation of
/// `datasets`.
inline NormStats compute_train_stats(const std::vector<const TimeSeriesDataset*>& datasets) {
  if (datasets.empty()) throw DataError("compute_train_stats: no datasets");
  const auto& schema = datasets.front()->schema;
  std::vector<Mat> ins, outs;
  for (const auto* d : datasets) {
    if (!(d->schema == schema)) throw DataError("compute_train_stats: datasets have different schemas");
    if (d->length() == 0) throw DataError("compute_train_stats: empty dataset");
    ins.push_back(d->inputs());
    outs.push_back(d->targets());
  }
  std::vector<const Mat*> pi, po;
  for (std::size_t k = 0; k < ins.size(); ++k) {
    pi.push_back(&ins[k]);
    po.push_back(&outs[k]);
  }
  NormStats s;
  detail::moments(pi, schema.n_inputs(), s.mu, s.sigma);
  detail::moments(po, schema.d_out(), s.target_mu, s.target_sigma);
  return s;
}

inline NormStats compute_train_stats(const std::vector<TimeSeriesDataset>& datasets) {
  std::vector<const TimeSeriesDataset*> p;
  for (const auto& d : datasets) p.push_back(&d);
  return compute_train_stats(p);
}

/// (x - mu) / sigma on inputs and targets, each with its own stats.
inline TimeSeriesDataset standardize(const TimeSeriesDataset& d, const NormStats& s) {
  if (s.mu.size() != d.schema.n_inputs() || s.sigma.size() != d.schema.n_inputs() ||
      s.target_mu.size() != d.schema.d_out() || s.target_sigma.size() != d.schema.d_out())
    throw DataError("standardize: stats have " + std::to_string(s.mu.size()) + " inputs / " +
                    std::to_string(s.target_mu.size()) + " targets, dataset has " +
                    std::to_string(d.schema.n_inputs()) + " / " + std::to_string(d.schema.d_out()));
  TimeSeriesDataset out = d;
  for (int i = 0; i < d.schema.n_inputs(); ++i) {
    auto row = out.values.row(d.schema.input_rows()[static_cast<std::size_t>(i)]);
    row = ((row.array() - s.mu(i)) / s.sigma(i)).matrix();
  }
  for (int j = 0; j < d.schema.d_out(); ++j) {
    auto row = out.values.row(d.schema.target_rows()[static_cast<std::size_t>(j)]);
    row = ((row.array() - s.target_mu(j)) / s.target_sigma(j)).matrix();
  }
  return out;
}

/// Maps standardized predictions [B x D] back to physical units.
inline Mat destandardize_targets(const Mat& y, const NormStats& s) {
  Mat out = y;
  for (Eigen::Index j = 0; j < y.cols(); ++j) out.col(j) = (y.col(j).array() * s.target_sigma(j) + s.target_mu(j)).matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Per-type input windows plus targets at the reference step.
struct WindowBatch {
  Tensor3 x_temp;   // [B x N_temp x T]
  Tensor3 x_press;  // [B x N_press x T]
  Tensor3 x_flow;   // [B x N_flow x T]
  Mat y;            // [B x D]
  std::vector<Eigen::Index> ref_times;

  std::size_t size() const { return ref_times.size(); }
  const Tensor3& x(SensorType t) const {
    return t == SensorType::Temperature ? x_temp : (t == SensorType::Pressure ? x_press : x_flow);
  }
  Tensor3& x(SensorType t) {
    return t == SensorType::Temperature ? x_temp : (t == SensorType::Pressure ? x_press : x_flow);
  }
};

/// Reference (last) indices of every window: T-1, T-1+stride, ...
inline std::vector<Eigen::Index> window_ends(Eigen::Index length, Eigen::Index window, Eigen::Index stride) {
  if (window < 1) throw DataError("window length must be >= 1");
  if (stride < 1) throw DataError("window stride must be >= 1");
  if (window > length)
    throw DataError("window length " + std::to_string(window) + " exceeds series length " + std::to_string(length));
  std::vector<Eigen::Index> ends;
  ends.reserve(static_cast<std::size_t>((length - window) / stride + 1));
  for (Eigen::Index t = window - 1; t < length; t += stride) ends.push_back(t);
  return ends;
}

/// A window identified by its dataset and reference step.
struct WindowRef {
  int dataset = 0;
  Eigen::Index end = 0;
};

/// Gathers windows of length `window` from possibly several datasets that
/// share one schema.
inline WindowBatch gather_windows(const std::vector<const TimeSeriesDataset*>& datasets,
                                  const std::vector<WindowRef>& refs, Eigen::Index window) {
  if (datasets.empty()) throw DataError("gather_windows: no datasets");
  const auto& schema = datasets.front()->schema;
  const std::size_t b = refs.size();
  WindowBatch w;
  w.x_temp = Tensor3(b, static_cast<std::size_t>(schema.n_temp()), static_cast<std::size_t>(window));
  w.x_press = Tensor3(b, static_cast<std::size_t>(schema.n_press()), static_cast<std::size_t>(window));
  w.x_flow = Tensor3(b, static_cast<std::size_t>(schema.n_flow()), static_cast<std::size_t>(window));
  w.y.resize(static_cast<Eigen::Index>(b), schema.d_out());
  w.ref_times.resize(b);
  for (std::size_t k = 0; k < b; ++k) {
    const auto& ref = refs[k];
    const TimeSeriesDataset& d = *datasets.at(static_cast<std::size_t>(ref.dataset));
    if (ref.end < window - 1 || ref.end >= d.length()) throw DataError("gather_windows: window out of range");
    const Eigen::Index start = ref.end - window + 1;
    for (SensorType t : kBranchOrder) {
      Tensor3& x = w.x(t);
      const auto& idx = schema.type_indices(t);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = d.values.row(schema.input_rows()[static_cast<std::size_t>(idx[i])]).data() + start;
        std::copy(src, src + window, &x(k, i, 0));
      }
    }
    for (int j = 0; j < schema.d_out(); ++j)
      w.y(static_cast<Eigen::Index>(k), j) = d.values(schema.target_rows()[static_cast<std::size_t>(j)], ref.end);
    w.ref_times[k] = ref.end;
  }
  return w;
}

/// Every window of one dataset: floor((T_len - T) / stride) + 1 of them.
inline WindowBatch make_windows(const TimeSeriesDataset& d, Eigen::Index window, Eigen::Index stride) {
  std::vector<WindowRef> refs;
  for (Eigen::Index e : window_ends(d.length(), window, stride)) refs.push_back({0, e});
  return gather_windows({&d}, refs, window);
}

// ---------------------------------------------------------------------------
// Leave-one-dataset-out
// ---------------------------------------------------------------------------

struct LosoSplit {
  std::vector<int> train_ids;
  int test_id = 0;
};

/// Split k trains on every dataset except k (0-based ids).
inline std::vector<LosoSplit> loso_splits(int n_datasets) {
  if (n_datasets < 2) throw DataError("leave-one-out needs at least 2 datasets, got " + std::to_string(n_datasets));
  std::vector<LosoSplit> out;
  for (int k = 0; k < n_datasets; ++k) {
    LosoSplit s;
    s.test_id = k;
    for (int j = 0; j < n_datasets; ++j)
      if (j != k) s.train_ids.push_back(j);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV I/O: <dir>/schema.csv and <dir>/data_<k>.csv
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  if (b < e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw DataError("cannot parse number '" + s + "' at " + where);
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace detail

inline std::filesystem::path data_file(const std::filesystem::path& dir, int k) {
  return dir / ("data_" + std::to_string(k) + ".csv");
}

inline void save_schema(const SensorNetworkSchema& schema, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "schema.csv");
  if (!f) throw DataError("cannot write " + (dir / "schema.csv").string());
  f << "id,kind,role,unit\n";
  for (const auto& s : schema.sensors()) f << s.id << ',' << type_code(s.kind) << ',' << role_name(s.role) << ',' << s.unit << '\n';
}

inline SensorNetworkSchema load_schema(const std::filesystem::path& dir) {
  std::ifstream f(dir / "schema.csv");
  if (!f) throw DataError("cannot open " + (dir / "schema.csv").string());
  std::string line;
  std::getline(f, line);
  if (detail::split_csv(line) != std::vector<std::string>{"id", "kind", "role", "unit"})
    throw DataError("schema.csv: header must be id,kind,role,unit");
  std::vector<SensorMeta> sensors;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto c = detail::split_csv(line);
    if (c.size() != 4) throw DataError("schema.csv line " + std::to_string(lineno) + ": expected 4 fields");
    sensors.push_back({c[0], parse_type(c[1]), parse_role(c[2]), c[3]});
  }
  return SensorNetworkSchema(std::move(sensors));
}

/// Writes schema.csv and data_<k>.csv.
inline void save_csv(const TimeSeriesDataset& d, const std::filesystem::path& dir, int k = 1) {
  save_schema(d.schema, dir);
  std::ofstream f(data_file(dir, k));
  if (!f) throw DataError("cannot write " + data_file(dir, k).string());
  f << "step";
  for (const auto& s : d.schema.sensors()) f << ',' << s.id;
  f << '\n';
  std::string line;
  for (Eigen::Index t = 0; t < d.length(); ++t) {
    line = std::to_string(t);
    for (Eigen::Index r = 0; r < d.values.rows(); ++r) {
      line.push_back(',');
      line += detail::format_double(d.values(r, t));
    }
    line.push_back('\n');
    f << line;
  }
  if (!f) throw DataError("write failed for " + data_file(dir, k).string());
}

/// Reads data_<k>.csv against `schema`; columns may appear in any order.
inline TimeSeriesDataset load_csv(const std::filesystem::path& dir, const SensorNetworkSchema& schema, int k = 1) {
  const auto path = data_file(dir, k);
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError(path.string() + ": empty file");
  auto header = detail::split_csv(line);
  if (header.empty() || header[0] != "step") throw DataError(path.string() + ": first column must be 'step'");
  std::vector<int> col_to_row(header.size(), -1);
  std::vector<bool> present(schema.sensors().size(), false);
  for (std::size_t c = 1; c < header.size(); ++c) {
    const int r = schema.find(header[c]);
    if (r < 0) throw DataError(path.string() + ": unknown sensor id '" + header[c] + "'");
    if (present[static_cast<std::size_t>(r)]) throw DataError(path.string() + ": duplicate column '" + header[c] + "'");
    present[static_cast<std::size_t>(r)] = true;
    col_to_row[c] = r;
  }
  for (std::size_t r = 0; r < present.size(); ++r)
    if (!present[r]) throw DataError(path.string() + ": missing column for sensor '" + schema.sensors()[r].id + "'");

  std::vector<std::vector<double>> cols(schema.sensors().size());
  std::size_t row = 0;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    auto c = detail::split_csv(line);
    if (c.size() != header.size())
      throw DataError(path.string() + ": data row " + std::to_string(row) + " has " + std::to_string(c.size()) +
                      " fields, expected " + std::to_string(header.size()));
    for (std::size_t j = 1; j < c.size(); ++j) {
      const std::string where = path.string() + " data row " + std::to_string(row) + ", column '" + header[j] + "'";
      const double v = detail::parse_double(c[j], where);
      if (!std::isfinite(v)) throw DataError("non-finite value at " + where);
      cols[static_cast<std::size_t>(col_to_row[j])].push_back(v);
    }
    ++row;
  }
  TimeSeriesDataset d;
  d.schema = schema;
  d.condition_label = "data_" + std::to_string(k);
  d.values.resize(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(row));
  for (std::size_t r = 0; r < cols.size(); ++r)
    for (std::size_t t = 0; t < row; ++t) d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = cols[r][t];
  return d;
}

/// Ids k of every data_<k>.csv in `dir`, ascending.
inline std::vector<int> dataset_ids(const std::filesystem::path& dir) {
  std::vector<int> ids;
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("data_", 0) != 0 || e.path().extension() != ".csv") continue;
    const std::string num = name.substr(5, name.size() - 9);
    int k = 0;
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), k);
    if (ec == std::errc() && p == num.data() + num.size()) ids.push_back(k);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Loads schema.csv plus every data_<k>.csv in ascending k.
inline std::vector<TimeSeriesDataset> load_benchmark(const std::filesystem::path& dir) {
  const auto schema = load_schema(dir);
  std::vector<TimeSeriesDataset> out;
  for (int k : dataset_ids(dir)) out.push_back(load_csv(dir, schema, k));
  if (out.empty()) throw DataError("no data_<k>.csv files in " + dir.string());
  return out;
}

}  // namespace hstgnn
