#pragma once

// Report writers: aggregated CSV, per-run CSV, aligned text tables and
// prediction traces.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hstgnn/train.hpp"

namespace hstgnn {

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// Dataset ids are 1-based in every emitted file.
inline std::string report_csv(const ExperimentReport& rep) {
  std::ostringstream o;
  o << "target,test_dataset,model,seeds,rmse_mean,rmse_std,mae_mean,mae_std\n";
  for (const auto& r : rep.rows())
    o << r.target << ',' << r.test_id + 1 << ',' << r.model << ',' << r.seeds << ','
      << detail::format_double(r.rmse_mean) << ',' << detail::format_double(r.rmse_std) << ','
      << detail::format_double(r.mae_mean) << ',' << detail::format_double(r.mae_std) << '\n';
  return o.str();
}

/// Raw per-seed metrics, including the residual sums and the train-mean predictor.
inline std::string runs_csv(const ExperimentReport& rep) {
  std::ostringstream o;
  o << "model,test_dataset,seed,target,m,rmse,mae,sse,sae,mean_rmse,mean_mae,epochs,best_epoch,steps\n";
  for (const auto& r : rep.runs)
    for (std::size_t j = 0; j < rep.targets.size(); ++j) {
      const auto& m = r.metrics[j];
      const auto& b = r.mean_predictor[j];
      o << r.model << ',' << r.test_id + 1 << ',' << r.seed << ',' << rep.targets[j] << ',' << m.m << ','
        << detail::format_double(m.rmse) << ',' << detail::format_double(m.mae) << ','
        << detail::format_double(m.sse) << ',' << detail::format_double(m.sae) << ','
        << detail::format_double(b.rmse) << ',' << detail::format_double(b.mae) << ',' << r.epochs << ','
        << r.best_epoch << ',' << r.steps << '\n';
    }
  return o.str();
}

/// One block per split: rows target x {RMSE, MAE}, one "mean +- std" column per model.
inline std::string report_table(const ExperimentReport& rep) {
  const auto rows = rep.rows();
  std::vector<int> splits;
  std::vector<std::string> models;
  for (const auto& r : rows) {
    if (std::find(splits.begin(), splits.end(), r.test_id) == splits.end()) splits.push_back(r.test_id);
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
  }
  std::size_t tw = 6;
  for (const auto& t : rep.targets) tw = std::max(tw, t.size());
  const std::size_t cw = 19;
  std::ostringstream o;
  for (int s : splits) {
    o << "Test dataset " << s + 1 << "\n";
    std::string head = std::string(tw, ' ') + "  metric";
    for (const auto& m : models) {
      std::string c = m;
      c.resize(std::max(cw, m.size()), ' ');
      head += "  " + c;
    }
    o << head << "\n" << std::string(head.size(), '-') << "\n";
    for (const auto& t : rep.targets)
      for (int metric = 0; metric < 2; ++metric) {
        std::string line = metric == 0 ? t : std::string();
        line.resize(tw, ' ');
        line += metric == 0 ? "  RMSE  " : "  MAE   ";
        for (const auto& m : models) {
          std::string cell = "-";
          for (const auto& r : rows)
            if (r.test_id == s && r.model == m && r.target == t)
              cell = metric == 0 ? detail::fixed(r.rmse_mean) + " +- " + detail::fixed(r.rmse_std)
                                 : detail::fixed(r.mae_mean) + " +- " + detail::fixed(r.mae_std);
          cell.resize(std::max(cw, m.size()), ' ');
          line += "  " + cell;
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        o << line << "\n";
      }
    o << "\n";
  }
  return o.str();
}

/// step,target_id,y_true,y_hat for every evaluated window.
inline std::string trace_csv(const EvalResult& ev, const SensorNetworkSchema& schema) {
  std::ostringstream o;
  o << "step,target_id,y_true,y_hat\n";
  for (Eigen::Index k = 0; k < ev.y_true.rows(); ++k)
    for (int j = 0; j < schema.d_out(); ++j)
      o << ev.steps[static_cast<std::size_t>(k)] << ',' << schema.target(j).id << ','
        << detail::format_double(ev.y_true(k, j)) << ',' << detail::format_double(ev.y_hat(k, j)) << '\n';
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto f = detail::open_out(path);
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

/// Writes `<base>.csv`, `<base>.txt` and `<base>_runs.csv` (base = path without extension).
inline void write_report(const ExperimentReport& rep, const std::filesystem::path& path) {
  std::filesystem::path base = path;
  base.replace_extension();
  write_text(base.string() + ".csv", report_csv(rep));
  write_text(base.string() + ".txt", report_table(rep));
  write_text(base.string() + "_runs.csv", runs_csv(rep));
}

/// Violations of rmse >= mae and rmse^2 * M == sse (relative `tol`); empty when consistent.
inline std::vector<std::string> metric_identity_violations(const ExperimentReport& rep, double tol = 1e-9) {
  std::vector<std::string> bad;
  auto where = [&](const RunRecord& r, std::size_t j) {
    return r.model + "/data_" + std::to_string(r.test_id + 1) + "/seed " + std::to_string(r.seed) + "/" +
           rep.targets[j];
  };
  for (const auto& r : rep.runs)
    for (std::size_t j = 0; j < r.metrics.size(); ++j) {
      for (const TargetMetrics* m : {&r.metrics[j], &r.mean_predictor[j]}) {
        if (!(m->rmse >= m->mae && m->mae >= 0.0)) bad.push_back(where(r, j) + ": rmse < mae");
        const double lhs = m->rmse * m->rmse * static_cast<double>(m->m);
        if (std::abs(lhs - m->sse) > tol * std::max(std::abs(m->sse), 1e-300))
          bad.push_back(where(r, j) + ": rmse^2 * M != sse");
      }
    }
  for (const auto& row : rep.rows())
    if (!(row.rmse_mean >= row.mae_mean))
      bad.push_back(row.model + "/data_" + std::to_string(row.test_id + 1) + "/" + row.target + ": mean rmse < mean mae");
  return bad;
}

}  // namespace hstgnn
