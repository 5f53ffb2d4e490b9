#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code under test except for plain data types.

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "hstgnn/hstgnn.hpp"
#include "hstgnn/gradcheck.hpp"

namespace oracle {

using hstgnn::Mat;
using hstgnn::Vec;

/// Exact inclusion probabilities of sequential sampling of k items without
/// replacement from weights `w` (w[self] ignored), by enumerating every
/// ordered draw sequence.
inline std::vector<double> inclusion_probabilities(const std::vector<double>& w, int self, int k) {
  const int n = static_cast<int>(w.size());
  std::vector<double> incl(static_cast<std::size_t>(n), 0.0);
  std::vector<int> chosen;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  used[static_cast<std::size_t>(self)] = true;
  auto rec = [&](auto&& self_rec, double prob, double remaining) -> void {
    if (static_cast<int>(chosen.size()) == k) {
      for (int j : chosen) incl[static_cast<std::size_t>(j)] += prob;
      return;
    }
    for (int j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double p = w[static_cast<std::size_t>(j)] / remaining;
      used[static_cast<std::size_t>(j)] = true;
      chosen.push_back(j);
      self_rec(self_rec, prob * p, remaining - w[static_cast<std::size_t>(j)]);
      chosen.pop_back();
      used[static_cast<std::size_t>(j)] = false;
    }
  };
  double total = 0.0;
  for (int j = 0; j < n; ++j)
    if (j != self) total += w[static_cast<std::size_t>(j)];
  rec(rec, 1.0, total);
  return incl;
}

/// Row-normalized transition matrix by explicit loops.
inline Mat row_stochastic(const Mat& a) {
  Mat p = a;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) s += a(i, j);
    for (Eigen::Index j = 0; j < a.cols(); ++j) p(i, j) = s > 0.0 ? a(i, j) / s : 0.0;
  }
  return p;
}

/// Dense evaluation of relu(sum_s P^s H W_s + sum_s Pr^s H Wr_s) for one block,
/// with P^s formed as an explicit matrix power.
inline Mat dense_diffusion(const Mat& h, const Mat& p, const Mat* p_rev, const std::vector<Mat>& w,
                           const std::vector<Mat>& w_rev) {
  const Eigen::Index n = p.rows();
  Mat acc = Mat::Zero(h.rows(), w.front().cols());
  Mat power = Mat::Identity(n, n);
  for (std::size_t s = 0; s < w.size(); ++s) {
    acc += power * h * w[s];
    power = power * p;
  }
  if (p_rev != nullptr) {
    Mat pr = *p_rev;
    for (std::size_t s = 0; s < w_rev.size(); ++s) {
      acc += pr * h * w_rev[s];
      pr = pr * *p_rev;
    }
  }
  return acc.cwiseMax(0.0);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Scalar-loop GRU over one sequence: x is [T x in], returns [T x hidden].
/// Weight layout [in x 3h] with gate blocks (r, z, n).
inline Mat gru(const Mat& x, const Mat& w_ih, const Mat& w_hh, const Mat& b_ih, const Mat& b_hh) {
  const Eigen::Index h = w_hh.rows();
  Mat out(x.rows(), h);
  std::vector<double> hp(static_cast<std::size_t>(h), 0.0);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    std::vector<double> hn(static_cast<std::size_t>(h));
    for (Eigen::Index u = 0; u < h; ++u) {
      double gi[3], gh[3];
      for (int g = 0; g < 3; ++g) {
        const Eigen::Index col = g * h + u;
        gi[g] = b_ih(0, col);
        gh[g] = b_hh(0, col);
        for (Eigen::Index k = 0; k < x.cols(); ++k) gi[g] += x(t, k) * w_ih(k, col);
        for (Eigen::Index k = 0; k < h; ++k) gh[g] += hp[static_cast<std::size_t>(k)] * w_hh(k, col);
      }
      const double r = sigmoid(gi[0] + gh[0]);
      const double z = sigmoid(gi[1] + gh[1]);
      const double n = std::tanh(gi[2] + r * gh[2]);
      hn[static_cast<std::size_t>(u)] = (1.0 - z) * n + z * hp[static_cast<std::size_t>(u)];
    }
    hp = hn;
    for (Eigen::Index u = 0; u < h; ++u) out(t, u) = hp[static_cast<std::size_t>(u)];
  }
  return out;
}

/// Scalar-loop LSTM over one sequence, gate blocks (i, f, g, o).
inline Mat lstm(const Mat& x, const Mat& w_ih, const Mat& w_hh, const Mat& b_ih, const Mat& b_hh) {
  const Eigen::Index h = w_hh.rows();
  Mat out(x.rows(), h);
  std::vector<double> hp(static_cast<std::size_t>(h), 0.0), cp(static_cast<std::size_t>(h), 0.0);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    std::vector<double> hn(static_cast<std::size_t>(h));
    for (Eigen::Index u = 0; u < h; ++u) {
      double a[4];
      for (int g = 0; g < 4; ++g) {
        const Eigen::Index col = g * h + u;
        a[g] = b_ih(0, col) + b_hh(0, col);
        for (Eigen::Index k = 0; k < x.cols(); ++k) a[g] += x(t, k) * w_ih(k, col);
        for (Eigen::Index k = 0; k < h; ++k) a[g] += hp[static_cast<std::size_t>(k)] * w_hh(k, col);
      }
      const double c = sigmoid(a[1]) * cp[static_cast<std::size_t>(u)] + sigmoid(a[0]) * std::tanh(a[2]);
      cp[static_cast<std::size_t>(u)] = c;
      hn[static_cast<std::size_t>(u)] = sigmoid(a[3]) * std::tanh(c);
    }
    hp = hn;
    for (Eigen::Index u = 0; u < h; ++u) out(t, u) = hp[static_cast<std::size_t>(u)];
  }
  return out;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Largest relative flow-balance residual of a noise-free run of the default
/// topology: series edges carry equal flow, the split after Pipe 1 conserves
/// flow, each branch ends at its meter, and the pump flow is the branch sum.
inline double continuity_residual(const hstgnn::SimResult& r) {
  const auto& d = r.dataset;
  auto col = [&](const std::string& id) -> Vec { return d.values.row(d.schema.find(id)).transpose(); };
  const Vec q01 = col("Boiler_Q2_1"), q12 = col("Pump_Q2_12"), q23 = col("Pipe_Q3_1");
  const Vec b1 = col("Pipe_Q3_2"), b2a = col("Pipe_Q3_3"), b2b = col("Pipe_Q3_4");
  const Vec m1 = col("SM1_flow"), m2 = col("SM2_flow");
  double worst = 0.0;
  for (Eigen::Index t = 0; t < d.length(); ++t) {
    for (double v : {rel_diff(q01(t), q12(t)), rel_diff(q12(t), q23(t)), rel_diff(q23(t), b1(t) + b2a(t)),
                     rel_diff(b2a(t), b2b(t)), rel_diff(b1(t), m1(t)), rel_diff(b2b(t), m2(t)),
                     rel_diff(r.trace.total_flow(t), r.trace.branch_flows[0](t) + r.trace.branch_flows[1](t)),
                     rel_diff(r.trace.total_flow(t), q23(t))})
      worst = std::max(worst, v);
  }
  return worst;
}

/// Largest relative mismatch between stored meter power/energy and a fresh
/// recomputation from flow and temperatures.
inline double meter_residual(const hstgnn::SimResult& r, const hstgnn::SimConfig& cfg) {
  double worst = 0.0;
  for (const auto& m : r.truth.meters) {
    double energy = 0.0;
    for (Eigen::Index t = 0; t < m.flow.size(); ++t) {
      const double p = (m.flow(t) * cfg.rho / 60.0) * cfg.c_p * (m.t_in(t) - m.t_out(t));
      energy += p * cfg.dt;
      worst = std::max({worst, rel_diff(p, m.power(t)), rel_diff(energy, m.energy(t))});
    }
  }
  return worst;
}

/// Small model and training settings for fast end-to-end checks.
inline hstgnn::ModelSpec tiny_spec(hstgnn::ModelKind kind) {
  hstgnn::ModelSpec s;
  s.kind = kind;
  s.hstgnn.d = 4;
  s.hstgnn.d_h = 4;
  s.hstgnn.window = 6;
  s.hstgnn.k = 2;
  s.baseline.window = 6;
  s.baseline.lstm_hidden = 4;
  s.baseline.cnn_filters = 4;
  s.baseline.node_dim = 4;
  s.baseline.gru_hidden = 4;
  s.baseline.k = 3;
  return s;
}

inline hstgnn::TrainConfig tiny_train() {
  hstgnn::TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 2;
  tc.patience = 1;
  tc.val_fraction = 0.2;
  tc.seeds = {0};
  return tc;
}

/// Three random datasets on tiny_schema(3, 2, 2, 2).
inline std::vector<hstgnn::TimeSeriesDataset> tiny_benchmark(std::uint64_t seed, Eigen::Index length = 80, int n = 3) {
  hstgnn::Rng rng(seed);
  const auto schema = hstgnn::tiny_schema(3, 2, 2, 2);
  std::vector<hstgnn::TimeSeriesDataset> out;
  for (int k = 0; k < n; ++k) {
    hstgnn::TimeSeriesDataset d;
    d.schema = schema;
    d.values = hstgnn::init::normal(9, length, 1.0, rng);
    // targets depend on inputs so training has signal
    d.values.row(7) = 0.5 * d.values.row(0) + 0.3 * d.values.row(3) + 0.1 * d.values.row(7);
    d.values.row(8) = d.values.row(5) - d.values.row(1) + 0.1 * d.values.row(8);
    d.values.array() += static_cast<double>(k);
    out.push_back(std::move(d));
  }
  return out;
}

inline bool bit_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool bit_equal(const hstgnn::ParamStore& a, const hstgnn::ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || !bit_equal(a[i].value, b[i].value)) return false;
  return true;
}

}  // namespace oracle
