#pragma once

// Training loop, evaluation, leave-one-dataset-out experiments and ablations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <memory>
#include <string>
#include <vector>

#include "hstgnn/data.hpp"
#include "hstgnn/models.hpp"

namespace hstgnn {

// ---------------------------------------------------------------------------
// Loss and metrics
// ---------------------------------------------------------------------------

/// Mean of |y_hat - y| over all entries.
inline Var mae_loss(Var y_hat, Var y) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
    throw ShapeError("mae_loss: " + shape_str(y_hat.value()) + " vs " + shape_str(y.value()));
  return ad::mean(ad::abs(ad::sub(y_hat, y)));
}

struct TargetMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double sse = 0.0;  // sum of squared residuals
  double sae = 0.0;  // sum of absolute residuals
  std::size_t m = 0;
};

inline TargetMetrics metrics(const Eigen::Ref<const Vec>& y_hat, const Eigen::Ref<const Vec>& y) {
  if (y_hat.size() != y.size()) throw ShapeError("metrics: series lengths differ");
  if (y.size() == 0) throw std::invalid_argument("metrics: empty series");
  TargetMetrics r;
  r.m = static_cast<std::size_t>(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double e = y_hat(i) - y(i);
    r.sse += e * e;
    r.sae += std::abs(e);
  }
  const double m = static_cast<double>(r.m);
  r.rmse = std::sqrt(r.sse / m);
  r.mae = r.sae / m;
  return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Mat> m, v;
  long step = 0;

  explicit AdamState(const ParamStore& store) {
    for (const auto& p : store) {
      m.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  }
};

/// One bias-corrected Adam update from the gradients held in `store`.
inline void adam_step(ParamStore& store, AdamState& st, const AdamConfig& c) {
  if (st.m.size() != store.size()) throw ShapeError("adam_step: state does not match parameters");
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * p.grad;
    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= c.lr * (st.m[i].array() / bc1) / ((st.v[i].array() / bc2).sqrt() + c.eps);
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 512;
  int max_epochs = 100;
  int patience = 10;            // epochs without validation improvement; <= 0 disables early stopping
  double val_fraction = 0.1;    // temporal tail of each training dataset
  int window_stride = 1;        // > 1 trains on every stride-th window, phase rotating per epoch
  int val_stride = 1;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool verbose = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::nan("");
  long steps = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  long total_steps = 0;
  bool stopped_early = false;
};

struct Checkpoint {
  ModelSpec spec;
  SensorNetworkSchema schema;
  NormStats stats;
  std::uint64_t seed = 0;
  ParamStore params;
  TrainHistory history;
};

/// Rebuilds the model of a checkpoint and loads its parameter values.
inline std::unique_ptr<Model> restore_model(const Checkpoint& ck) {
  auto model = make_model(ck.spec, ck.schema, ck.seed);
  ParamStore& dst = model->params();
  if (dst.size() != ck.params.size())
    throw DataError("checkpoint has " + std::to_string(ck.params.size()) + " parameter tensors, model expects " +
                    std::to_string(dst.size()));
  for (auto& p : dst) {
    if (!ck.params.contains(p.name)) throw DataError("checkpoint lacks parameter '" + p.name + "'");
    const Mat& v = ck.params.at(p.name).value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(v) + ", expected " +
                      shape_str(p.value));
    p.value = v;
  }
  return model;
}

/// Training and validation portions of one dataset, split before windowing.
inline std::pair<TimeSeriesDataset, TimeSeriesDataset> temporal_split(const TimeSeriesDataset& d, double val_fraction) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("val_fraction must be in [0, 1)");
  const Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(static_cast<double>(d.length()) * val_fraction));
  return {d.slice(0, d.length() - n_val), d.slice(d.length() - n_val, n_val)};
}

/// Mean absolute error of a model over `refs`, in standardized units.
inline double mean_abs_error(const Model& model, const std::vector<const TimeSeriesDataset*>& data,
                             const std::vector<WindowRef>& refs, int window, int batch_size) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < refs.size(); s += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(refs.size(), s + static_cast<std::size_t>(batch_size));
    const WindowBatch b = gather_windows(data, {refs.begin() + static_cast<long>(s), refs.begin() + static_cast<long>(e)}, window);
    const Mat pred = model.predict(b);
    sum += (pred - b.y).cwiseAbs().sum();
    count += static_cast<std::size_t>(pred.size());
  }
  return count == 0 ? std::nan("") : sum / static_cast<double>(count);
}

inline std::vector<WindowRef> collect_refs(const std::vector<const TimeSeriesDataset*>& data, int window, int stride) {
  std::vector<WindowRef> refs;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k]->length() < window) continue;
    for (Eigen::Index e : window_ends(data[k]->length(), window, stride)) refs.push_back({static_cast<int>(k), e});
  }
  return refs;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::unique_ptr<Model> model;
};

/// Trains on `split.train_ids` of `datasets`. Only those datasets are read.
inline TrainResult train(const ModelSpec& spec, const std::vector<TimeSeriesDataset>& datasets, const LosoSplit& split,
                         const TrainConfig& tc, std::uint64_t seed) {
  retain_heap_memory();
  if (split.train_ids.empty()) throw DataError("train: no training datasets");
  if (tc.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (tc.window_stride < 1 || tc.val_stride < 1) throw std::invalid_argument("strides must be >= 1");
  const int window = spec.window();

  std::vector<TimeSeriesDataset> train_raw, val_raw;
  for (int id : split.train_ids) {
    const TimeSeriesDataset& d = datasets.at(static_cast<std::size_t>(id));
    d.validate();
    auto [tr, va] = temporal_split(d, tc.val_fraction);
    train_raw.push_back(std::move(tr));
    val_raw.push_back(std::move(va));
  }
  const SensorNetworkSchema& schema = train_raw.front().schema;
  const NormStats stats = compute_train_stats(train_raw);

  std::vector<TimeSeriesDataset> train_std, val_std;
  for (const auto& d : train_raw) train_std.push_back(standardize(d, stats));
  for (const auto& d : val_raw) val_std.push_back(standardize(d, stats));
  std::vector<const TimeSeriesDataset*> tp, vp;
  for (const auto& d : train_std) tp.push_back(&d);
  for (const auto& d : val_std) vp.push_back(&d);

  const std::vector<WindowRef> all_refs = collect_refs(tp, window, 1);
  if (all_refs.empty()) throw DataError("train: no training windows");
  const std::vector<WindowRef> val_refs = collect_refs(vp, window, tc.val_stride);
  const bool early_stop = tc.patience > 0 && !val_refs.empty();

  auto model = make_model(spec, schema, seed);
  ParamStore& params = model->params();
  AdamState adam(params);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);

  TrainHistory hist;
  std::vector<Mat> best;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    std::vector<WindowRef> refs;
    if (tc.window_stride == 1) {
      refs = all_refs;
    } else {
      const std::size_t phase = static_cast<std::size_t>(epoch % tc.window_stride);
      for (std::size_t i = phase; i < all_refs.size(); i += static_cast<std::size_t>(tc.window_stride))
        refs.push_back(all_refs[i]);
    }
    rng.shuffle(refs);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < refs.size(); s += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t e = std::min(refs.size(), s + static_cast<std::size_t>(tc.batch_size));
      const WindowBatch b =
          gather_windows(tp, {refs.begin() + static_cast<long>(s), refs.begin() + static_cast<long>(e)}, window);
      Tape tape;
      ForwardContext ctx;
      ctx.mode = Mode::Train;
      ctx.rng = &rng;
      Var loss = mae_loss(model->forward(tape, b, ctx), tape.constant(b.y));
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv))
        throw NumericError(model->name() + ": non-finite training loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(hist.total_steps));
      tape.backward(loss);
      params.zero_grad();
      tape.accumulate_into(params);
      adam_step(params, adam, tc.adam);
      loss_sum += lv * static_cast<double>(e - s);
      ++rec.steps;
      ++hist.total_steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(refs.size());
    if (!val_refs.empty()) {
      rec.val_loss = mean_abs_error(*model, vp, val_refs, window, tc.batch_size);
      if (!std::isfinite(rec.val_loss))
        throw NumericError(model->name() + ": non-finite validation loss at epoch " + std::to_string(epoch));
    }
    hist.epochs.push_back(rec);
    if (tc.verbose)
      std::cerr << model->name() << " epoch " << epoch << " train " << rec.train_loss << " val " << rec.val_loss
                << "\n";

    if (early_stop) {
      if (rec.val_loss < best_val) {
        best_val = rec.val_loss;
        hist.best_epoch = epoch;
        since_best = 0;
        best.clear();
        for (const auto& p : params) best.push_back(p.value);
      } else if (++since_best >= tc.patience) {
        hist.stopped_early = true;
        break;
      }
    } else {
      hist.best_epoch = epoch;
    }
  }
  if (early_stop && !best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i];
  params.zero_grad();

  TrainResult r;
  r.checkpoint = Checkpoint{spec, schema, stats, seed, params, std::move(hist)};
  r.model = std::move(model);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  Mat y_true;  // [M x D], physical units
  Mat y_hat;
  std::vector<Eigen::Index> steps;
  std::vector<TargetMetrics> per_target;
};

inline std::vector<TargetMetrics> per_target_metrics(const Mat& y_hat, const Mat& y) {
  std::vector<TargetMetrics> out;
  for (Eigen::Index j = 0; j < y.cols(); ++j) out.push_back(metrics(y_hat.col(j), y.col(j)));
  return out;
}

/// Deterministic inference over every window of `test` (stride 1).
inline EvalResult evaluate(const Model& model, const NormStats& stats, const TimeSeriesDataset& test,
                           int batch_size = 512) {
  retain_heap_memory();
  if (!(test.schema == model.schema())) throw DataError("evaluate: dataset schema does not match the model");
  test.validate();
  const TimeSeriesDataset std_test = standardize(test, stats);
  const std::vector<const TimeSeriesDataset*> data{&std_test};
  const std::vector<WindowRef> refs = collect_refs(data, model.window(), 1);
  if (refs.empty()) throw DataError("evaluate: test series shorter than the window");
  const Eigen::Index m = static_cast<Eigen::Index>(refs.size()), d = test.schema.d_out();
  EvalResult r;
  r.y_true.resize(m, d);
  r.y_hat.resize(m, d);
  const Mat targets = test.targets();
  for (std::size_t s = 0; s < refs.size(); s += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(refs.size(), s + static_cast<std::size_t>(batch_size));
    const WindowBatch b =
        gather_windows(data, {refs.begin() + static_cast<long>(s), refs.begin() + static_cast<long>(e)}, model.window());
    r.y_hat.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e - s)) =
        destandardize_targets(model.predict(b), stats);
    for (std::size_t k = s; k < e; ++k) {
      r.steps.push_back(refs[k].end);
      r.y_true.row(static_cast<Eigen::Index>(k)) = targets.col(refs[k].end).transpose();
    }
  }
  if (!r.y_hat.allFinite()) throw NumericError(model.name() + ": non-finite prediction");
  r.per_target = per_target_metrics(r.y_hat, r.y_true);
  return r;
}

/// Metrics of the constant predictor that outputs the training target means.
inline std::vector<TargetMetrics> mean_predictor_metrics(const NormStats& stats, const EvalResult& ev) {
  Mat pred(ev.y_true.rows(), ev.y_true.cols());
  for (Eigen::Index j = 0; j < pred.cols(); ++j) pred.col(j).setConstant(stats.target_mu(j));
  return per_target_metrics(pred, ev.y_true);
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// One (split, model, seed) training run.
struct RunRecord {
  std::string model;
  int test_id = 0;  // 0-based dataset index
  std::uint64_t seed = 0;
  std::vector<TargetMetrics> metrics;
  std::vector<TargetMetrics> mean_predictor;
  int epochs = 0;
  int best_epoch = -1;
  long steps = 0;
  double seconds = 0.0;
};

/// Mean and population std over seeds for one (target, split, model).
struct ReportRow {
  std::string target;
  int test_id = 0;
  std::string model;
  double rmse_mean = 0.0, rmse_std = 0.0, mae_mean = 0.0, mae_std = 0.0;
  std::size_t seeds = 0;
};

struct ExperimentReport {
  std::vector<std::string> targets;
  std::vector<RunRecord> runs;

  /// Rows ordered by split, then model in first-run order, then target.
  std::vector<ReportRow> rows() const {
    std::vector<std::string> models;
    std::vector<int> splits;
    for (const auto& r : runs) {
      if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
      if (std::find(splits.begin(), splits.end(), r.test_id) == splits.end()) splits.push_back(r.test_id);
    }
    std::sort(splits.begin(), splits.end());
    std::vector<ReportRow> out;
    for (int s : splits)
      for (const auto& m : models) {
        std::vector<const RunRecord*> sel;
        for (const auto& r : runs)
          if (r.test_id == s && r.model == m) sel.push_back(&r);
        if (sel.empty()) continue;
        for (std::size_t j = 0; j < targets.size(); ++j) {
          ReportRow row{targets[j], s, m};
          row.seeds = sel.size();
          const double n = static_cast<double>(sel.size());
          for (const auto* r : sel) {
            row.rmse_mean += r->metrics[j].rmse / n;
            row.mae_mean += r->metrics[j].mae / n;
          }
          for (const auto* r : sel) {
            row.rmse_std += std::pow(r->metrics[j].rmse - row.rmse_mean, 2) / n;
            row.mae_std += std::pow(r->metrics[j].mae - row.mae_mean, 2) / n;
          }
          row.rmse_std = std::sqrt(row.rmse_std);
          row.mae_std = std::sqrt(row.mae_std);
          out.push_back(row);
        }
      }
    return out;
  }

  /// Mean test RMSE over seeds for (model, split, target index).
  double mean_rmse(const std::string& model, int test_id, std::size_t target) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : runs)
      if (r.model == model && r.test_id == test_id) {
        sum += r.metrics.at(target).rmse;
        ++n;
      }
    if (n == 0) throw std::out_of_range("no runs for " + model + " on dataset " + std::to_string(test_id));
    return sum / n;
  }
};

using RunObserver = std::function<void(const RunRecord&)>;

inline RunRecord train_and_evaluate(const ModelSpec& spec, const std::string& label,
                                    const std::vector<TimeSeriesDataset>& datasets, const LosoSplit& split,
                                    const TrainConfig& tc, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train(spec, datasets, split, tc, seed);
  const EvalResult ev = evaluate(*tr.model, tr.checkpoint.stats, datasets.at(static_cast<std::size_t>(split.test_id)),
                                 tc.batch_size);
  RunRecord r;
  r.model = label;
  r.test_id = split.test_id;
  r.seed = seed;
  r.metrics = ev.per_target;
  r.mean_predictor = mean_predictor_metrics(tr.checkpoint.stats, ev);
  r.epochs = static_cast<int>(tr.checkpoint.history.epochs.size());
  r.best_epoch = tr.checkpoint.history.best_epoch;
  r.steps = tr.checkpoint.history.total_steps;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::vector<std::string> target_ids(const SensorNetworkSchema& schema) {
  std::vector<std::string> ids;
  for (int j = 0; j < schema.d_out(); ++j) ids.push_back(schema.target(j).id);
  return ids;
}

/// Every leave-one-out split x model x seed. `splits` empty means all splits.
inline ExperimentReport run_experiment(const std::vector<ModelSpec>& models,
                                       const std::vector<TimeSeriesDataset>& datasets, const TrainConfig& tc,
                                       const RunObserver& observer = {}, std::vector<int> splits = {}) {
  if (datasets.empty()) throw DataError("run_experiment: no datasets");
  ExperimentReport rep;
  rep.targets = target_ids(datasets.front().schema);
  const auto all = loso_splits(static_cast<int>(datasets.size()));
  if (splits.empty())
    for (const auto& s : all) splits.push_back(s.test_id);
  for (int s : splits)
    for (const auto& spec : models)
      for (std::uint64_t seed : tc.seeds) {
        rep.runs.push_back(train_and_evaluate(spec, model_name(spec.kind), datasets, all.at(static_cast<std::size_t>(s)), tc, seed));
        if (observer) observer(rep.runs.back());
      }
  return rep;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

enum class AblationVariant { Full, NoPressure, NoFlow, NoTemperature, Simplified };

inline std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::NoPressure: return "no_pressure";
    case AblationVariant::NoFlow: return "no_flow";
    case AblationVariant::NoTemperature: return "no_temperature";
    case AblationVariant::Simplified: return "simplified";
  }
  return "?";
}

inline AblationVariant parse_variant(const std::string& s) {
  for (AblationVariant v : {AblationVariant::Full, AblationVariant::NoPressure, AblationVariant::NoFlow,
                            AblationVariant::NoTemperature, AblationVariant::Simplified})
    if (variant_name(v) == s) return v;
  throw std::invalid_argument("unknown ablation variant '" + s + "'");
}

/// Input type removed by a sensor-group variant.
inline std::optional<SensorType> dropped_type(AblationVariant v) {
  switch (v) {
    case AblationVariant::NoPressure: return SensorType::Pressure;
    case AblationVariant::NoFlow: return SensorType::Flow;
    case AblationVariant::NoTemperature: return SensorType::Temperature;
    default: return std::nullopt;
  }
}

/// Datasets and model as seen by a variant.
inline std::pair<std::vector<TimeSeriesDataset>, ModelSpec> ablation_setup(AblationVariant v,
                                                                           const std::vector<TimeSeriesDataset>& datasets,
                                                                           const HstgnnConfig& cfg) {
  ModelSpec spec;
  spec.kind = v == AblationVariant::Simplified ? ModelKind::Simplified : ModelKind::Hstgnn;
  spec.hstgnn = cfg;
  std::vector<TimeSeriesDataset> data;
  const auto t = dropped_type(v);
  for (const auto& d : datasets) data.push_back(t ? d.without(*t) : d);
  return {std::move(data), spec};
}

inline ExperimentReport run_ablation(AblationVariant v, const std::vector<TimeSeriesDataset>& datasets,
                                     const TrainConfig& tc, const HstgnnConfig& cfg = {},
                                     const RunObserver& observer = {}, std::vector<int> splits = {}) {
  if (datasets.empty()) throw DataError("run_ablation: no datasets");
  auto [data, spec] = ablation_setup(v, datasets, cfg);
  ExperimentReport rep;
  rep.targets = target_ids(data.front().schema);
  const auto all = loso_splits(static_cast<int>(data.size()));
  if (splits.empty())
    for (const auto& s : all) splits.push_back(s.test_id);
  for (int s : splits)
    for (std::uint64_t seed : tc.seeds) {
      rep.runs.push_back(train_and_evaluate(spec, variant_name(v), data, all.at(static_cast<std::size_t>(s)), tc, seed));
      if (observer) observer(rep.runs.back());
    }
  return rep;
}

}  // namespace hstgnn
