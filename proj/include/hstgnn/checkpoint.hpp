#pragma once

// JSON checkpoints and configuration files.
//
// Checkpoint layout (format "hstgnn-checkpoint", version 1):
//   model    {kind, hstgnn {...}, baseline {...}}
//   seed     initialization seed
//   schema   [{id, kind, role, unit}]
//   stats    {mu, sigma, target_mu, target_sigma}
//   params   [{name, rows, cols, init, data (row-major)}]
//   history  {best_epoch, total_steps, stopped_early, epochs [{epoch, train_loss, val_loss, steps}]}
// Doubles are written with round-trip precision, so save/load is bit-exact.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "hstgnn/train.hpp"

namespace hstgnn {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec json_vec(const json& j) {
  const auto d = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(d.data(), static_cast<Eigen::Index>(d.size()));
}

inline double json_number_or_nan(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

/// Overwrites `field` from `j[key]` when present.
template <typename T>
void read_opt(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

inline json to_json(const HstgnnConfig& c) {
  return {{"d", c.d},           {"gru_layers", c.gru_layers},
          {"d_h", c.d_h},       {"k", c.k},
          {"diffusion_steps", c.diffusion_steps}, {"gnn_layers", c.gnn_layers},
          {"window", c.window}, {"bidirectional", c.bidirectional},
          {"temperature", c.temperature},         {"embedding_std", c.embedding_std}};
}

inline void from_json(const json& j, HstgnnConfig& c) {
  detail::reject_unknown(j, {"d", "gru_layers", "d_h", "k", "diffusion_steps", "gnn_layers", "window", "bidirectional",
                             "temperature", "embedding_std"},
                         "hstgnn config");
  detail::read_opt(j, "d", c.d);
  detail::read_opt(j, "gru_layers", c.gru_layers);
  detail::read_opt(j, "d_h", c.d_h);
  detail::read_opt(j, "k", c.k);
  detail::read_opt(j, "diffusion_steps", c.diffusion_steps);
  detail::read_opt(j, "gnn_layers", c.gnn_layers);
  detail::read_opt(j, "window", c.window);
  detail::read_opt(j, "bidirectional", c.bidirectional);
  detail::read_opt(j, "temperature", c.temperature);
  detail::read_opt(j, "embedding_std", c.embedding_std);
  if (c.d < 1 || c.d_h < 1 || c.gru_layers < 1 || c.k < 0 || c.diffusion_steps < 0 || c.gnn_layers < 1 ||
      c.window < 1 || !(c.temperature > 0.0) || c.embedding_std < 0.0)
    throw ConfigError("hstgnn config: values out of range");
}

inline json to_json(const BaselineConfig& c) {
  return {{"window", c.window},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_layers", c.lstm_layers},
          {"cnn_filters", c.cnn_filters},
          {"cnn_kernel", c.cnn_kernel},
          {"node_dim", c.node_dim},
          {"k", c.k},
          {"diffusion_steps", c.diffusion_steps},
          {"bidirectional", c.bidirectional},
          {"temperature", c.temperature},
          {"embedding_std", c.embedding_std},
          {"gru_hidden", c.gru_hidden},
          {"gru_layers", c.gru_layers}};
}

inline void from_json(const json& j, BaselineConfig& c) {
  detail::reject_unknown(j, {"window", "lstm_hidden", "lstm_layers", "cnn_filters", "cnn_kernel", "node_dim", "k",
                             "diffusion_steps", "bidirectional", "temperature", "embedding_std", "gru_hidden",
                             "gru_layers"},
                         "baseline config");
  detail::read_opt(j, "window", c.window);
  detail::read_opt(j, "lstm_hidden", c.lstm_hidden);
  detail::read_opt(j, "lstm_layers", c.lstm_layers);
  detail::read_opt(j, "cnn_filters", c.cnn_filters);
  detail::read_opt(j, "cnn_kernel", c.cnn_kernel);
  detail::read_opt(j, "node_dim", c.node_dim);
  detail::read_opt(j, "k", c.k);
  detail::read_opt(j, "diffusion_steps", c.diffusion_steps);
  detail::read_opt(j, "bidirectional", c.bidirectional);
  detail::read_opt(j, "temperature", c.temperature);
  detail::read_opt(j, "embedding_std", c.embedding_std);
  detail::read_opt(j, "gru_hidden", c.gru_hidden);
  detail::read_opt(j, "gru_layers", c.gru_layers);
  if (c.window < 1 || c.lstm_hidden < 1 || c.lstm_layers < 1 || c.cnn_filters < 1 || c.cnn_kernel < 1 ||
      c.node_dim < 1 || c.k < 0 || c.diffusion_steps < 0 || !(c.temperature > 0.0) || c.gru_hidden < 1 ||
      c.gru_layers < 1)
    throw ConfigError("baseline config: values out of range");
}

inline json to_json(const TrainConfig& c) {
  return {{"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"val_fraction", c.val_fraction},
          {"window_stride", c.window_stride},
          {"val_stride", c.val_stride},
          {"seeds", c.seeds}};
}

inline void from_json(const json& j, TrainConfig& c) {
  detail::reject_unknown(j, {"lr", "beta1", "beta2", "eps", "batch_size", "max_epochs", "patience", "val_fraction",
                             "window_stride", "val_stride", "seeds"},
                         "train config");
  detail::read_opt(j, "lr", c.adam.lr);
  detail::read_opt(j, "beta1", c.adam.beta1);
  detail::read_opt(j, "beta2", c.adam.beta2);
  detail::read_opt(j, "eps", c.adam.eps);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "max_epochs", c.max_epochs);
  detail::read_opt(j, "patience", c.patience);
  detail::read_opt(j, "val_fraction", c.val_fraction);
  detail::read_opt(j, "window_stride", c.window_stride);
  detail::read_opt(j, "val_stride", c.val_stride);
  detail::read_opt(j, "seeds", c.seeds);
  if (!(c.adam.lr > 0.0) || c.batch_size < 1 || c.max_epochs < 0 || c.val_fraction < 0.0 || c.val_fraction >= 1.0 ||
      c.window_stride < 1 || c.val_stride < 1 || c.seeds.empty())
    throw ConfigError("train config: values out of range");
}

/// Run configuration file: {"train": {...}, "hstgnn": {...}, "baseline": {...}}, every key optional.
struct RunConfig {
  TrainConfig train;
  HstgnnConfig hstgnn;
  BaselineConfig baseline;
};

inline RunConfig parse_run_config(const json& j) {
  detail::reject_unknown(j, {"train", "hstgnn", "baseline"}, "config");
  RunConfig rc;
  if (j.contains("train")) from_json(j.at("train"), rc.train);
  if (j.contains("hstgnn")) from_json(j.at("hstgnn"), rc.hstgnn);
  if (j.contains("baseline")) from_json(j.at("baseline"), rc.baseline);
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline json checkpoint_to_json(const Checkpoint& ck) {
  json j;
  j["format"] = "hstgnn-checkpoint";
  j["version"] = kCheckpointVersion;
  j["model"] = {{"kind", model_name(ck.spec.kind)},
                {"hstgnn", to_json(ck.spec.hstgnn)},
                {"baseline", to_json(ck.spec.baseline)}};
  j["seed"] = ck.seed;
  json sensors = json::array();
  for (const auto& s : ck.schema.sensors())
    sensors.push_back({{"id", s.id}, {"kind", std::string(1, type_code(s.kind))}, {"role", role_name(s.role)},
                       {"unit", s.unit}});
  j["schema"] = sensors;
  j["stats"] = {{"mu", detail::vec_json(ck.stats.mu)},
                {"sigma", detail::vec_json(ck.stats.sigma)},
                {"target_mu", detail::vec_json(ck.stats.target_mu)},
                {"target_sigma", detail::vec_json(ck.stats.target_sigma)}};
  json params = json::array();
  for (const auto& p : ck.params)
    params.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"init", p.init},
                      {"data", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}});
  j["params"] = params;
  json epochs = json::array();
  for (const auto& e : ck.history.epochs) {
    json je = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"steps", e.steps}};
    je["val_loss"] = std::isfinite(e.val_loss) ? json(e.val_loss) : json(nullptr);
    epochs.push_back(je);
  }
  j["history"] = {{"best_epoch", ck.history.best_epoch},
                  {"total_steps", ck.history.total_steps},
                  {"stopped_early", ck.history.stopped_early},
                  {"epochs", epochs}};
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != "hstgnn-checkpoint") throw DataError("not an hstgnn checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const json& m = j.at("model");
    ck.spec.kind = parse_model_kind(m.at("kind").get<std::string>());
    from_json(m.at("hstgnn"), ck.spec.hstgnn);
    from_json(m.at("baseline"), ck.spec.baseline);
    ck.seed = j.at("seed").get<std::uint64_t>();
    std::vector<SensorMeta> sensors;
    for (const auto& s : j.at("schema"))
      sensors.push_back({s.at("id").get<std::string>(), parse_type(s.at("kind").get<std::string>()),
                         parse_role(s.at("role").get<std::string>()), s.at("unit").get<std::string>()});
    ck.schema = SensorNetworkSchema(std::move(sensors));
    const json& st = j.at("stats");
    ck.stats = {detail::json_vec(st.at("mu")), detail::json_vec(st.at("sigma")), detail::json_vec(st.at("target_mu")),
                detail::json_vec(st.at("target_sigma"))};
    for (const auto& p : j.at("params")) {
      const auto rows = p.at("rows").get<Eigen::Index>(), cols = p.at("cols").get<Eigen::Index>();
      const auto data = p.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw DataError("parameter '" + p.at("name").get<std::string>() + "' has " + std::to_string(data.size()) +
                        " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
      Mat v = Eigen::Map<const Mat>(data.data(), rows, cols);
      ck.params.add(p.at("name").get<std::string>(), std::move(v), p.value("init", ""));
    }
    const json& h = j.at("history");
    ck.history.best_epoch = h.at("best_epoch").get<int>();
    ck.history.total_steps = h.at("total_steps").get<long>();
    ck.history.stopped_early = h.at("stopped_early").get<bool>();
    for (const auto& e : h.at("epochs"))
      ck.history.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                                   detail::json_number_or_nan(e.at("val_loss")), e.at("steps").get<long>()});
    return ck;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f << checkpoint_to_json(ck).dump(1) << '\n';
  if (!f) throw DataError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace hstgnn
