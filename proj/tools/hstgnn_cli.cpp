// hstgnn: simulate, train, evaluate, experiment, ablate, gradcheck.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hstgnn/hstgnn.hpp"
#include "hstgnn/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace hstgnn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

std::vector<TimeSeriesDataset> load_data(const std::string& dir) { return load_benchmark(dir); }

/// 1-based dataset id -> 0-based index, validated against the loaded set.
int dataset_index(int k, std::size_t n) {
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ConfigError("--test-dataset must be in 1.." + std::to_string(n) + ", got " + std::to_string(k));
  return k - 1;
}

std::vector<int> split_indices(const std::vector<int>& ids, std::size_t n) {
  std::vector<int> out;
  for (int k : ids) out.push_back(dataset_index(k, n));
  return out;
}

void print_run(const RunRecord& r, const std::vector<std::string>& targets) {
  std::fprintf(stderr, "[%s data_%d seed %llu] %d epochs, %ld steps, %.1fs\n", r.model.c_str(), r.test_id + 1,
               static_cast<unsigned long long>(r.seed), r.epochs, r.steps, r.seconds);
  for (std::size_t j = 0; j < targets.size(); ++j)
    std::fprintf(stderr, "    %-12s rmse %.4f  mae %.4f  (train-mean rmse %.4f)\n", targets[j].c_str(),
                 r.metrics[j].rmse, r.metrics[j].mae, r.mean_predictor[j].rmse);
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Heterogeneous spatio-temporal GNN virtual sensing toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write the four operating-condition datasets");
  std::string sim_out;
  SimConfig sim_cfg;
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--steps", sim_cfg.duration_steps, "Steps per dataset, warm-up included")->capture_default_str();
  sim->add_option("--warmup", sim_cfg.warmup_steps, "Warm-up steps dropped from the output")->capture_default_str();
  sim->add_option("--seed", sim_cfg.seed, "Seed of dataset 1 (dataset k uses seed + k - 1)")->capture_default_str();
  sim->add_option("--noise-temp", sim_cfg.noise.temperature, "Temperature noise std (degC)")->capture_default_str();
  sim->add_option("--noise-press", sim_cfg.noise.pressure, "Pressure noise std (bar)")->capture_default_str();
  sim->add_option("--noise-flow", sim_cfg.noise.flow, "Flow noise std (l/min)")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train one model on all datasets but the test dataset");
  std::string tr_data, tr_model = "hstgnn", tr_config, tr_out;
  int tr_test = 1;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "Benchmark directory")->required();
  tr->add_option("--model", tr_model, "hstgnn|simplified|lstm|cnn1d|gcn|dgc|gru-gcn")->capture_default_str();
  tr->add_option("--test-dataset", tr_test, "Held-out dataset id (1-based)")->capture_default_str();
  tr->add_option("--seed", tr_seed, "Initialization and shuffling seed")->capture_default_str();
  tr->add_option("--config", tr_config, "JSON run configuration");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  bool tr_verbose = false;
  tr->add_flag("--verbose", tr_verbose, "Log per-epoch losses");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on one dataset");
  std::string ev_ckpt, ev_data, ev_report, ev_trace;
  int ev_test = 1;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Benchmark directory")->required();
  ev->add_option("--test-dataset", ev_test, "Dataset id (1-based)")->capture_default_str();
  ev->add_option("--report", ev_report, "Report path (writes .csv, .txt and _runs.csv)")->required();
  ev->add_option("--trace", ev_trace, "Optional prediction trace CSV");

  // experiment
  auto* ex = app.add_subcommand("experiment", "Leave-one-dataset-out matrix over models and seeds");
  std::string ex_data, ex_config, ex_report;
  std::vector<std::string> ex_models;
  std::vector<std::uint64_t> ex_seeds;
  std::vector<int> ex_splits;
  ex->add_option("--data", ex_data, "Benchmark directory")->required();
  ex->add_option("--models", ex_models, "Comma-separated model list (default: hstgnn and all baselines)")
      ->delimiter(',');
  ex->add_option("--seeds", ex_seeds, "Comma-separated seeds (default 0,1,2)")->delimiter(',');
  ex->add_option("--splits", ex_splits, "Held-out dataset ids to run (default: all)")->delimiter(',');
  ex->add_option("--config", ex_config, "JSON run configuration");
  ex->add_option("--report", ex_report, "Report path (writes .csv, .txt and _runs.csv)")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run one ablation variant over every split");
  std::string ab_variant, ab_data, ab_config, ab_report;
  std::vector<std::uint64_t> ab_seeds;
  std::vector<int> ab_splits;
  ab->add_option("--variant", ab_variant, "full|no_pressure|no_flow|no_temperature|simplified")->required();
  ab->add_option("--data", ab_data, "Benchmark directory")->required();
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds (default 0,1,2)")->delimiter(',');
  ab->add_option("--splits", ab_splits, "Held-out dataset ids to run (default: all)")->delimiter(',');
  ab->add_option("--config", ab_config, "JSON run configuration");
  ab->add_option("--report", ab_report, "Report path (writes .csv, .txt and _runs.csv)")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) {
      const auto results = export_benchmark(sim_out, sim_cfg);
      std::cout << "wrote " << results.size() << " datasets of " << results.front().dataset.length() << " steps to "
                << sim_out << "\n";
    } else if (*tr) {
      RunConfig rc = load_config_or_default(tr_config);
      rc.train.verbose = tr_verbose;
      const auto data = load_data(tr_data);
      ModelSpec spec{parse_model_kind(tr_model), rc.hstgnn, rc.baseline};
      const auto split = loso_splits(static_cast<int>(data.size())).at(
          static_cast<std::size_t>(dataset_index(tr_test, data.size())));
      TrainResult res = train(spec, data, split, rc.train, tr_seed);
      save_checkpoint(res.checkpoint, tr_out);
      const auto& h = res.checkpoint.history;
      std::cout << "trained " << tr_model << " for " << h.epochs.size() << " epochs (" << h.total_steps
                << " steps), best epoch " << h.best_epoch << "; checkpoint " << tr_out << "\n";
    } else if (*ev) {
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const auto data = load_data(ev_data);
      const int idx = dataset_index(ev_test, data.size());
      auto model = restore_model(ck);
      const EvalResult res = evaluate(*model, ck.stats, data[static_cast<std::size_t>(idx)]);
      ExperimentReport rep;
      rep.targets = target_ids(ck.schema);
      RunRecord r;
      r.model = model_name(ck.spec.kind);
      r.test_id = idx;
      r.seed = ck.seed;
      r.metrics = res.per_target;
      r.mean_predictor = mean_predictor_metrics(ck.stats, res);
      r.epochs = static_cast<int>(ck.history.epochs.size());
      r.best_epoch = ck.history.best_epoch;
      r.steps = ck.history.total_steps;
      rep.runs.push_back(r);
      write_report(rep, ev_report);
      if (!ev_trace.empty()) write_text(ev_trace, trace_csv(res, ck.schema));
      std::cout << report_table(rep);
    } else if (*ex) {
      RunConfig rc = load_config_or_default(ex_config);
      if (!ex_seeds.empty()) rc.train.seeds = ex_seeds;
      const auto data = load_data(ex_data);
      std::vector<ModelSpec> specs;
      std::vector<ModelKind> kinds;
      if (ex_models.empty()) {
        kinds = comparison_models();
      } else {
        for (const auto& m : ex_models) kinds.push_back(parse_model_kind(m));
      }
      for (ModelKind k : kinds) specs.push_back({k, rc.hstgnn, rc.baseline});
      const auto targets = target_ids(data.front().schema);
      const auto rep = run_experiment(specs, data, rc.train, [&](const RunRecord& r) { print_run(r, targets); },
                                      split_indices(ex_splits, data.size()));
      write_report(rep, ex_report);
      std::cout << report_table(rep);
    } else if (*ab) {
      RunConfig rc = load_config_or_default(ab_config);
      if (!ab_seeds.empty()) rc.train.seeds = ab_seeds;
      const auto data = load_data(ab_data);
      const AblationVariant v = parse_variant(ab_variant);
      const auto targets = target_ids(data.front().schema);
      const auto rep = run_ablation(v, data, rc.train, rc.hstgnn, [&](const RunRecord& r) { print_run(r, targets); },
                                    split_indices(ab_splits, data.size()));
      write_report(rep, ab_report);
      std::cout << report_table(rep);
    } else if (*gc) {
      const auto t0 = std::chrono::steady_clock::now();
      bool ok = true;
      for (const auto& c : run_gradcheck_suite()) {
        std::printf("%-4s %-28s max rel err %.3e (tol %.0e, %zu coords, worst %s[%ld])\n", c.passed() ? "ok" : "FAIL",
                    c.name.c_str(), c.result.max_rel_error, c.tolerance, c.result.coordinates,
                    c.result.worst_param.c_str(), static_cast<long>(c.result.worst_index));
        ok = ok && c.passed();
      }
      std::printf("%.1fs\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      return ok ? kOk : kNumeric;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
