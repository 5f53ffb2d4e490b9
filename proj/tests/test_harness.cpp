#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "support.hpp"

using namespace hstgnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hstgnn_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Metrics, HandComputed) {
  Vec y_hat(2), y(2);
  y_hat << 0, 0;
  y << 3, 4;  // residuals 3, 4: rmse sqrt(12.5), mae 3.5
  const auto m = metrics(y_hat, y);
  EXPECT_NEAR(m.rmse, 3.5355, 1e-4);
  EXPECT_DOUBLE_EQ(m.mae, 3.5);
  EXPECT_DOUBLE_EQ(m.sse, 25.0);
  EXPECT_DOUBLE_EQ(m.sae, 7.0);
  EXPECT_EQ(m.m, 2u);
  EXPECT_THROW(metrics(Vec(0), Vec(0)), std::invalid_argument);
}

TEST(Metrics, MaeLoss) {
  Tape t;
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 3, 0, 1, 6;
  EXPECT_DOUBLE_EQ(mae_loss(t.constant(a), t.constant(b)).value()(0, 0), 2.0);
  EXPECT_THROW(mae_loss(t.constant(a), t.constant(Mat::Zero(1, 2))), ShapeError);
}

TEST(Metrics, RmseAtLeastMaeProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(50));
    const Mat a = init::normal(n, 1, 3.0, rng), b = init::normal(n, 1, 1.0, rng);
    const auto m = metrics(a.col(0), b.col(0));
    EXPECT_GE(m.rmse, m.mae);
    EXPECT_NEAR(m.rmse * m.rmse * static_cast<double>(m.m), m.sse, 1e-9 * m.sse);
  }
}

TEST(Adam, FirstStepIsLrTimesSign) {
  ParamStore s;
  s.add("w", Mat::Zero(1, 3), "");
  s.at("w").grad << 2.0, -0.5, 1e-3;
  AdamState st(s);
  AdamConfig c;
  c.lr = 0.1;
  adam_step(s, st, c);
  EXPECT_NEAR(s.at("w").value(0, 0), -0.1, 1e-7);
  EXPECT_NEAR(s.at("w").value(0, 1), 0.1, 1e-7);
  EXPECT_NEAR(s.at("w").value(0, 2), -0.1, 1e-5);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MinimizesQuadratic) {
  ParamStore s;
  s.add("w", Mat::Constant(1, 1, 5.0), "");
  AdamState st(s);
  AdamConfig c;
  c.lr = 0.1;
  for (int i = 0; i < 500; ++i) {
    s.at("w").grad = 2.0 * (s.at("w").value.array() - 1.0).matrix();
    adam_step(s, st, c);
  }
  EXPECT_NEAR(s.at("w").value(0, 0), 1.0, 1e-2);
}

TEST(Split, TemporalTail) {
  TimeSeriesDataset d;
  d.schema = tiny_schema(1, 0, 0, 1);
  d.values = Mat::Zero(2, 100);
  for (Eigen::Index t = 0; t < 100; ++t) d.values(0, t) = static_cast<double>(t);
  auto [tr, va] = temporal_split(d, 0.1);
  EXPECT_EQ(tr.length(), 90);
  EXPECT_EQ(va.length(), 10);
  EXPECT_EQ(va.values(0, 0), 90.0);
  auto [all, none] = temporal_split(d, 0.0);
  EXPECT_EQ(all.length(), 100);
  EXPECT_EQ(none.length(), 0);
}

TEST(Train, LeakAuditPoisonedTestDataset) {
  auto data = oracle::tiny_benchmark(1);
  const auto split = loso_splits(3)[1];
  const auto tc = oracle::tiny_train();
  const auto spec = oracle::tiny_spec(ModelKind::Hstgnn);
  const TrainResult clean = train(spec, data, split, tc, 0);
  for (double poison : {std::numeric_limits<double>::quiet_NaN(), 1e300}) {
    auto poisoned = data;
    poisoned[static_cast<std::size_t>(split.test_id)].values.setConstant(poison);
    const TrainResult p = train(spec, poisoned, split, tc, 0);
    EXPECT_TRUE(oracle::bit_equal(clean.checkpoint.params, p.checkpoint.params));
    EXPECT_TRUE(oracle::bit_equal(clean.checkpoint.stats.mu, p.checkpoint.stats.mu));
    EXPECT_TRUE(oracle::bit_equal(clean.checkpoint.stats.sigma, p.checkpoint.stats.sigma));
  }
}

TEST(Train, StatsComeFromTrainingPortionsOnly) {
  auto data = oracle::tiny_benchmark(2);
  const auto split = loso_splits(3)[0];
  auto tc = oracle::tiny_train();
  const TrainResult r = train(oracle::tiny_spec(ModelKind::Simplified), data, split, tc, 0);
  std::vector<TimeSeriesDataset> parts;
  for (int id : split.train_ids) parts.push_back(temporal_split(data[static_cast<std::size_t>(id)], tc.val_fraction).first);
  const NormStats ref = compute_train_stats(parts);
  EXPECT_TRUE(oracle::bit_equal(r.checkpoint.stats.mu, ref.mu));
  EXPECT_TRUE(oracle::bit_equal(r.checkpoint.stats.target_sigma, ref.target_sigma));
}

TEST(Train, DeterministicForSeed) {
  const auto data = oracle::tiny_benchmark(3);
  const auto split = loso_splits(3)[2];
  const auto tc = oracle::tiny_train();
  for (ModelKind k : {ModelKind::Hstgnn, ModelKind::GruGcn}) {
    const auto a = train(oracle::tiny_spec(k), data, split, tc, 4);
    const auto b = train(oracle::tiny_spec(k), data, split, tc, 4);
    const auto c = train(oracle::tiny_spec(k), data, split, tc, 5);
    EXPECT_TRUE(oracle::bit_equal(a.checkpoint.params, b.checkpoint.params));
    EXPECT_FALSE(oracle::bit_equal(a.checkpoint.params, c.checkpoint.params));
  }
}

TEST(Train, EarlyStoppingRestoresBest) {
  const auto data = oracle::tiny_benchmark(4);
  auto tc = oracle::tiny_train();
  tc.max_epochs = 12;
  tc.patience = 2;
  tc.adam.lr = 0.2;  // noisy enough to stall
  const LosoSplit split = loso_splits(3)[0];
  const auto r = train(oracle::tiny_spec(ModelKind::Simplified), data, split, tc, 0);
  const auto& h = r.checkpoint.history;
  ASSERT_GE(h.best_epoch, 0);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : h.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(h.epochs[static_cast<std::size_t>(h.best_epoch)].val_loss, best);
  if (h.stopped_early) EXPECT_EQ(static_cast<int>(h.epochs.size()), h.best_epoch + 1 + tc.patience);
  // restored params reproduce the best validation loss
  std::vector<TimeSeriesDataset> val;
  for (int id : split.train_ids)
    val.push_back(standardize(temporal_split(data[static_cast<std::size_t>(id)], tc.val_fraction).second,
                              r.checkpoint.stats));
  std::vector<const TimeSeriesDataset*> vp;
  for (const auto& v : val) vp.push_back(&v);
  const auto refs = collect_refs(vp, 6, tc.val_stride);
  EXPECT_DOUBLE_EQ(mean_abs_error(*r.model, vp, refs, 6, tc.batch_size), best);
}

TEST(Train, WindowStrideCutsSteps) {
  const auto data = oracle::tiny_benchmark(5);
  auto tc = oracle::tiny_train();
  tc.patience = 0;
  tc.max_epochs = 1;
  const auto full = train(oracle::tiny_spec(ModelKind::Lstm), data, loso_splits(3)[0], tc, 0);
  tc.window_stride = 4;
  const auto quarter = train(oracle::tiny_spec(ModelKind::Lstm), data, loso_splits(3)[0], tc, 0);
  // 2 datasets x (64 - 5) windows = 118 -> 8 batches of 16; stride 4 -> 30 -> 2 batches
  EXPECT_EQ(full.checkpoint.history.total_steps, 8);
  EXPECT_EQ(quarter.checkpoint.history.total_steps, 2);
}

TEST(Train, NonFiniteLossIsNumericError) {
  auto data = oracle::tiny_benchmark(6);
  auto tc = oracle::tiny_train();
  tc.adam.lr = 1e200;
  tc.max_epochs = 5;
  EXPECT_THROW(train(oracle::tiny_spec(ModelKind::Simplified), data, loso_splits(3)[0], tc, 0), NumericError);
}

TEST(Evaluate, MeanPredictorUsesTrainMeans) {
  const auto data = oracle::tiny_benchmark(7);
  const auto split = loso_splits(3)[0];
  const auto r = train(oracle::tiny_spec(ModelKind::Cnn1d), data, split, oracle::tiny_train(), 0);
  const auto ev = evaluate(*r.model, r.checkpoint.stats, data[0]);
  EXPECT_EQ(ev.y_true.rows(), 75);
  EXPECT_EQ(ev.steps.front(), 5);
  const auto mp = mean_predictor_metrics(r.checkpoint.stats, ev);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Vec pred = Vec::Constant(ev.y_true.rows(), r.checkpoint.stats.target_mu(j));
    EXPECT_DOUBLE_EQ(mp[static_cast<std::size_t>(j)].rmse, metrics(pred, ev.y_true.col(j)).rmse);
  }
  TimeSeriesDataset other = data[0];
  other.schema = tiny_schema(3, 2, 2, 2).without(SensorType::Flow);
  EXPECT_THROW(evaluate(*r.model, r.checkpoint.stats, other), DataError);
}

TEST(Evaluate, ExperimentMatrixCount) {
  const auto data = oracle::tiny_benchmark(8, 40, 4);
  auto tc = oracle::tiny_train();
  tc.max_epochs = 1;
  tc.seeds = {0, 1, 2};
  std::vector<ModelSpec> specs;
  for (ModelKind k : comparison_models()) specs.push_back(oracle::tiny_spec(k));
  int seen = 0;
  const auto rep = run_experiment(specs, data, tc, [&](const RunRecord&) { ++seen; });
  EXPECT_EQ(rep.runs.size(), 72u);
  EXPECT_EQ(seen, 72);
  EXPECT_EQ(rep.rows().size(), 4u * 6u * 2u);
  EXPECT_TRUE(metric_identity_violations(rep).empty());
  const auto sub = run_experiment({specs[0]}, data, tc, {}, {2});
  EXPECT_EQ(sub.runs.size(), 3u);
  EXPECT_EQ(sub.runs[0].test_id, 2);
}

TEST(Ablation, SetupDropsOneType) {
  const auto data = oracle::tiny_benchmark(9);
  auto [d, spec] = ablation_setup(AblationVariant::NoTemperature, data, HstgnnConfig{});
  EXPECT_EQ(d[0].schema.n_temp(), 0);
  EXPECT_EQ(d[0].schema.d_out(), 2);
  EXPECT_EQ(spec.kind, ModelKind::Hstgnn);
  EXPECT_EQ(d[0].targets(), data[0].targets());
  auto [d2, spec2] = ablation_setup(AblationVariant::Simplified, data, HstgnnConfig{});
  EXPECT_EQ(spec2.kind, ModelKind::Simplified);
  EXPECT_EQ(d2[0].schema, data[0].schema);
  for (auto v : {AblationVariant::Full, AblationVariant::NoPressure, AblationVariant::NoFlow,
                 AblationVariant::NoTemperature, AblationVariant::Simplified})
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("no_everything"), std::invalid_argument);
}

TEST(Report, StdIsPopulation) {
  ExperimentReport rep;
  rep.targets = {"y"};
  for (double v : {1.0, 3.0}) {
    RunRecord r;
    r.model = "m";
    r.metrics = {TargetMetrics{v, v / 2, v * v, v, 1}};
    r.mean_predictor = r.metrics;
    rep.runs.push_back(r);
  }
  const auto rows = rep.rows();
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].rmse_mean, 2.0);
  EXPECT_DOUBLE_EQ(rows[0].rmse_std, 1.0);
  EXPECT_EQ(rows[0].seeds, 2u);
  EXPECT_DOUBLE_EQ(rep.mean_rmse("m", 0, 0), 2.0);
  EXPECT_THROW(rep.mean_rmse("x", 0, 0), std::out_of_range);
}

TEST(Report, FilesAndOneBasedIds) {
  const auto data = oracle::tiny_benchmark(10);
  auto tc = oracle::tiny_train();
  tc.seeds = {0, 1};
  const auto rep = run_experiment({oracle::tiny_spec(ModelKind::Dgc)}, data, tc, {}, {0});
  const auto dir = scratch("report");
  write_report(rep, dir / "out.csv");
  const std::string csv = slurp(dir / "out.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "target,test_dataset,model,seeds,rmse_mean,rmse_std,mae_mean,mae_std");
  EXPECT_NE(csv.find("y0,1,dgc,2,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out.txt"));
  EXPECT_NE(slurp(dir / "out.txt").find("Test dataset 1"), std::string::npos);
  EXPECT_NE(slurp(dir / "out_runs.csv").find("dgc,1,1,y1,"), std::string::npos);
}

TEST(Report, IdentityViolationsDetected) {
  ExperimentReport rep;
  rep.targets = {"y"};
  RunRecord r;
  r.model = "m";
  r.metrics = {TargetMetrics{1.0, 2.0, 1.0, 2.0, 1}};
  r.mean_predictor = {TargetMetrics{1.0, 1.0, 1.5, 1.0, 1}};
  rep.runs.push_back(r);
  EXPECT_EQ(metric_identity_violations(rep).size(), 3u);
}

TEST(Report, TraceRows) {
  EvalResult ev;
  ev.y_true = Mat::Ones(2, 2);
  ev.y_hat = Mat::Zero(2, 2);
  ev.steps = {15, 16};
  const std::string t = trace_csv(ev, tiny_schema(1, 0, 0, 2));
  EXPECT_EQ(t, "step,target_id,y_true,y_hat\n15,y0,1,0\n15,y1,1,0\n16,y0,1,0\n16,y1,1,0\n");
}

TEST(Checkpoint, RoundTripPredictsIdentically) {
  const auto data = oracle::tiny_benchmark(11);
  for (ModelKind k : {ModelKind::Hstgnn, ModelKind::Lstm, ModelKind::GruGcn}) {
    auto tc = oracle::tiny_train();
    const auto r = train(oracle::tiny_spec(k), data, loso_splits(3)[0], tc, 3);
    const auto path = scratch("ckpt") / "m.json";
    save_checkpoint(r.checkpoint, path);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_TRUE(oracle::bit_equal(back.params, r.checkpoint.params));
    EXPECT_EQ(back.seed, 3u);
    EXPECT_EQ(back.spec.kind, k);
    EXPECT_EQ(back.history.epochs.size(), r.checkpoint.history.epochs.size());
    EXPECT_TRUE(back.schema == r.checkpoint.schema);
    auto m = restore_model(back);
    const auto e1 = evaluate(*r.model, r.checkpoint.stats, data[0]);
    const auto e2 = evaluate(*m, back.stats, data[0]);
    EXPECT_TRUE(oracle::bit_equal(e1.y_hat, e2.y_hat));
  }
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = scratch("corrupt");
  std::ofstream(dir / "bad.json") << "{\"format\": \"something-else\"}";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), DataError);
  std::ofstream(dir / "trunc.json") << "{\"format\": ";
  EXPECT_THROW(load_checkpoint(dir / "trunc.json"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), DataError);
}

TEST(Config, ParseDefaultsAndOverrides) {
  const RunConfig rc = parse_run_config(nlohmann::json::parse(
      R"({"train": {"lr": 0.001, "seeds": [7]}, "hstgnn": {"k": 3, "bidirectional": false}})"));
  EXPECT_DOUBLE_EQ(rc.train.adam.lr, 0.001);
  EXPECT_EQ(rc.train.seeds, std::vector<std::uint64_t>{7});
  EXPECT_EQ(rc.train.batch_size, 512);
  EXPECT_EQ(rc.hstgnn.k, 3);
  EXPECT_FALSE(rc.hstgnn.bidirectional);
  EXPECT_EQ(rc.baseline.lstm_hidden, 256);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"train": {"learning_rate": 1}})")), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"hstgnn": {"k": -1}})")), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"train": {"val_fraction": 1.0}})")), ConfigError);
  EXPECT_THROW(parse_run_config(nlohmann::json::parse(R"({"model": {}})")), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig rc;
  rc.train.window_stride = 3;
  rc.hstgnn.d_h = 9;
  rc.baseline.cnn_kernel = 5;
  const nlohmann::json j = {{"train", to_json(rc.train)}, {"hstgnn", to_json(rc.hstgnn)},
                            {"baseline", to_json(rc.baseline)}};
  const RunConfig back = parse_run_config(j);
  EXPECT_EQ(back.train.window_stride, 3);
  EXPECT_EQ(back.hstgnn.d_h, 9);
  EXPECT_EQ(back.baseline.cnn_kernel, 5);
}
