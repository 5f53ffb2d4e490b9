#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hstgnn/autodiff.hpp"

namespace hstgnn {

/// Seeded generator with portable uniform/normal/Gumbel draws (no reliance on
/// implementation-defined std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }
  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  /// Uniform on the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  double gumbel() { return -std::log(-std::log(uniform_open())); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace init {

inline Mat uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

inline Mat normal(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

inline std::string uniform_tag(double bound) { return "uniform(+-" + std::to_string(bound) + ")"; }

}  // namespace init

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

struct LinearVars {
  Var weight;  // [in x out]
  Var bias;    // [1 x out]
};

/// Registers `<prefix>.weight` [in x out] and `<prefix>.bias` [1 x out], uniform +-1/sqrt(in).
inline void add_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(prefix + ".weight", init::uniform(in, out, bound, rng), init::uniform_tag(bound));
  store.add(prefix + ".bias", init::uniform(1, out, bound, rng), init::uniform_tag(bound));
}

inline LinearVars bind_linear(Tape& tape, const ParamStore& store, const std::string& prefix) {
  return {tape.param(store, prefix + ".weight"), tape.param(store, prefix + ".bias")};
}

/// Affine map over the trailing dimension: x W + b.
inline Var linear(Var x, Var weight, Var bias) {
  if (x.cols() != weight.rows())
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " != " + std::to_string(weight.rows()));
  return ad::add_rowvec(ad::matmul(x, weight), bias);
}
inline Var linear(Var x, const LinearVars& l) { return linear(x, l.weight, l.bias); }

// ---------------------------------------------------------------------------
// Recurrent layers (fused forward/backward)
// ---------------------------------------------------------------------------

/// Input sequences are time-major: rows [t * M, (t + 1) * M) hold step t of
/// M independent sequences. The output has the same layout.
struct RecurrentVars {
  Var w_ih;  // [in x G * hidden]
  Var w_hh;  // [hidden x G * hidden]
  Var b_ih;  // [1 x G * hidden]
  Var b_hh;  // [1 x G * hidden]
};

inline void add_recurrent(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
                          Eigen::Index gates, Rng& rng) {
  const double bin = 1.0 / std::sqrt(static_cast<double>(in));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  store.add(prefix + ".w_ih", init::uniform(in, gates * hidden, bin, rng), init::uniform_tag(bin));
  store.add(prefix + ".w_hh", init::uniform(hidden, gates * hidden, bh, rng), init::uniform_tag(bh));
  store.add(prefix + ".b_ih", init::uniform(1, gates * hidden, bh, rng), init::uniform_tag(bh));
  store.add(prefix + ".b_hh", init::uniform(1, gates * hidden, bh, rng), init::uniform_tag(bh));
}

inline RecurrentVars bind_recurrent(Tape& tape, const ParamStore& store, const std::string& prefix) {
  return {tape.param(store, prefix + ".w_ih"), tape.param(store, prefix + ".w_hh"),
          tape.param(store, prefix + ".b_ih"), tape.param(store, prefix + ".b_hh")};
}

namespace detail {

inline Eigen::ArrayXXd sigm(const Eigen::ArrayXXd& a) { return (1.0 + (-a).exp()).inverse(); }
inline Eigen::ArrayXXd tanh_arr(const Eigen::ArrayXXd& a) { return 1.0 - 2.0 / ((2.0 * a).exp() + 1.0); }

/// Row-at-a-time GRU recurrence. Each of the M sequences is independent, so the
/// whole window of one sequence stays in registers/L1. `H` is the hidden width
/// when known at compile time, Eigen::Dynamic otherwise.
template <int H>
struct GruKernel {
  using Row3 = Eigen::Array<double, 1, (H == Eigen::Dynamic ? Eigen::Dynamic : 3 * H)>;
  using Row2 = Eigen::Array<double, 1, (H == Eigen::Dynamic ? Eigen::Dynamic : 2 * H)>;
  using Row = Eigen::Array<double, 1, H>;
  using Map3 = Eigen::Map<const Row3>;

  // cache row layout: r | z | n | (h W_hn + b_hn)
  static void forward(const Mat& x, const Mat& w_ih, const Mat& w_hh, const Mat& b_ih, const Mat& b_hh,
                      Eigen::Index steps, Eigen::Index h, Mat& out, Mat& cache) {
    const Eigen::Index m = x.rows() / steps;
    const Eigen::Index din = x.cols();
    const Eigen::Index g3 = 3 * h;
    for (Eigen::Index seq = 0; seq < m; ++seq) {
      Row hp = Row::Zero(h);
      for (Eigen::Index t = 0; t < steps; ++t) {
        const Eigen::Index row = t * m + seq;
        Row3 gi = Map3(b_ih.data(), g3);
        Row3 gh = Map3(b_hh.data(), g3);
        const double* xr = x.data() + row * din;
        for (Eigen::Index k = 0; k < din; ++k) gi += xr[k] * Map3(w_ih.data() + k * g3, g3);
        for (Eigen::Index k = 0; k < h; ++k) gh += hp(k) * Map3(w_hh.data() + k * g3, g3);
        Row2 rz = (1.0 + (-(gi.head(2 * h) + gh.head(2 * h))).exp()).inverse();
        Row hn = gh.tail(h);
        Row n = 1.0 - 2.0 / ((2.0 * (gi.tail(h) + rz.head(h) * hn)).exp() + 1.0);
        hp = (1.0 - rz.tail(h)) * n + rz.tail(h) * hp;
        double* c = cache.data() + row * 4 * h;
        Eigen::Map<Row2>(c, 2 * h) = rz;
        Eigen::Map<Row>(c + 2 * h, h) = n;
        Eigen::Map<Row>(c + 3 * h, h) = hn;
        Eigen::Map<Row>(out.data() + row * h, h) = hp;
      }
    }
  }

  /// Fills dgi (gradients of the input-path gate pre-activations) and dgh
  /// (hidden-path pre-activations; the candidate block differs by the factor r).
  static void backward(const Mat& g, const Mat& hs, const Mat& cache, const Mat& w_hh, Eigen::Index steps,
                       Eigen::Index h, Mat& dgi, Mat& dgh, Mat& dbi, Mat& dbh) {
    const Eigen::Index rows = hs.rows();
    const Eigen::Index m = rows / steps;
    const Eigen::Index g3 = 3 * h;
    dgi.resize(rows, g3);
    dgh.resize(rows, g3);
    const Mat wt = w_hh.transpose();  // [3h x h]
    using MapR = Eigen::Map<const Row>;
    Row3 sum_i = Row3::Zero(g3), sum_h = Row3::Zero(g3);
    for (Eigen::Index seq = 0; seq < m; ++seq) {
      Row dh_next = Row::Zero(h);
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const Eigen::Index row = t * m + seq;
        const double* c = cache.data() + row * 4 * h;
        const MapR r(c, h), z(c + h, h), n(c + 2 * h, h), hn(c + 3 * h, h);
        const Row hp = t > 0 ? Row(MapR(hs.data() + (row - m) * h, h)) : Row(Row::Zero(h));
        const Row dh = MapR(g.data() + row * h, h) + dh_next;
        const Row dan = dh * (1.0 - z) * (1.0 - n.square());
        const Row dar = dan * hn * r * (1.0 - r);
        const Row daz = dh * (hp - n) * z * (1.0 - z);
        double* gi = dgi.data() + row * g3;
        double* gh = dgh.data() + row * g3;
        Eigen::Map<Row>(gi, h) = dar;
        Eigen::Map<Row>(gi + h, h) = daz;
        Eigen::Map<Row>(gi + 2 * h, h) = dan;
        Eigen::Map<Row>(gh, h) = dar;
        Eigen::Map<Row>(gh + h, h) = daz;
        Eigen::Map<Row>(gh + 2 * h, h) = dan * r;
        sum_i += Eigen::Map<const Row3>(gi, g3);
        sum_h += Eigen::Map<const Row3>(gh, g3);
        dh_next = dh * z;
        for (Eigen::Index j = 0; j < g3; ++j) dh_next += gh[j] * MapR(wt.data() + j * h, h);
      }
    }
    dbi = sum_i.matrix();
    dbh = sum_h.matrix();
  }
};

}  // namespace detail

/// One GRU layer over `steps` time steps with zero initial state. Gate layout
/// (r, z, n):
///   r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
///   z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
///   n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
///   h' = (1 - z) * n + z * h
inline Var gru_layer(Var x, const RecurrentVars& p, Eigen::Index steps) {
  const Mat& X = x.value();
  const Eigen::Index h = p.w_hh.value().rows();
  if (p.w_ih.value().rows() != X.cols() || p.w_ih.value().cols() != 3 * h || p.w_hh.value().cols() != 3 * h ||
      p.b_ih.value().cols() != 3 * h || p.b_hh.value().cols() != 3 * h)
    throw ShapeError("gru_layer: parameter shapes do not match input width / hidden size");
  if (steps <= 0 || X.rows() % steps != 0) throw ShapeError("gru_layer: rows not divisible by steps");

  auto cache = std::make_shared<Mat>(X.rows(), 4 * h);
  Mat out(X.rows(), h);
  if (h == 16)
    detail::GruKernel<16>::forward(X, p.w_ih.value(), p.w_hh.value(), p.b_ih.value(), p.b_hh.value(), steps, h, out,
                                   *cache);
  else
    detail::GruKernel<Eigen::Dynamic>::forward(X, p.w_ih.value(), p.w_hh.value(), p.b_ih.value(), p.b_hh.value(),
                                               steps, h, out, *cache);

  return x.tape->record(std::move(out), {x, p.w_ih, p.w_hh, p.b_ih, p.b_hh},
                        [x, p, steps, h, cache](Tape& t, const Mat& g, const Mat& hs) {
                          Mat dgi, dgh, dbi, dbh;
                          if (h == 16)
                            detail::GruKernel<16>::backward(g, hs, *cache, p.w_hh.value(), steps, h, dgi, dgh, dbi,
                                                            dbh);
                          else
                            detail::GruKernel<Eigen::Dynamic>::backward(g, hs, *cache, p.w_hh.value(), steps, h, dgi,
                                                                        dgh, dbi, dbh);
                          const Eigen::Index m = hs.rows() / steps;
                          if (t.requires_grad(x)) {
                            Mat dx(hs.rows(), x.value().cols());
                            dx.noalias() = dgi * p.w_ih.value().transpose();
                            t.accumulate(x, dx);
                          }
                          if (t.requires_grad(p.w_ih)) {
                            Mat dw(x.value().cols(), 3 * h);
                            dw.noalias() = x.value().transpose() * dgi;
                            t.accumulate(p.w_ih, dw);
                          }
                          if (t.requires_grad(p.w_hh)) {
                            Mat dw(h, 3 * h);
                            dw.noalias() = hs.topRows(hs.rows() - m).transpose() * dgh.bottomRows(hs.rows() - m);
                            t.accumulate(p.w_hh, dw);
                          }
                          t.accumulate(p.b_ih, dbi);
                          t.accumulate(p.b_hh, dbh);
                        });
}

/// One LSTM layer, gate layout (i, f, g, o), zero initial state:
///   c' = f * c + i * g,  h' = o * tanh(c')
inline Var lstm_layer(Var x, const RecurrentVars& p, Eigen::Index steps) {
  const Mat& X = x.value();
  const Eigen::Index h = p.w_hh.value().rows();
  if (p.w_ih.value().rows() != X.cols() || p.w_ih.value().cols() != 4 * h || p.w_hh.value().cols() != 4 * h)
    throw ShapeError("lstm_layer: parameter shapes do not match input width / hidden size");
  if (steps <= 0 || X.rows() % steps != 0) throw ShapeError("lstm_layer: rows not divisible by steps");
  const Eigen::Index m = X.rows() / steps;

  Mat gi(X.rows(), 4 * h);
  gi.noalias() = X * p.w_ih.value();
  gi.rowwise() += p.b_ih.value().row(0);

  // cache columns: i | f | g | o | c
  auto cache = std::make_shared<Mat>(X.rows(), 5 * h);
  Mat out(X.rows(), h);
  Mat hprev = Mat::Zero(m, h);
  Eigen::ArrayXXd cprev = Eigen::ArrayXXd::Zero(m, h);
  Mat gates(m, 4 * h);
  for (Eigen::Index t = 0; t < steps; ++t) {
    gates.noalias() = hprev * p.w_hh.value();
    gates.rowwise() += p.b_hh.value().row(0);
    gates += gi.middleRows(t * m, m);
    Eigen::ArrayXXd ig = detail::sigm(gates.leftCols(h).array());
    Eigen::ArrayXXd fg = detail::sigm(gates.middleCols(h, h).array());
    Eigen::ArrayXXd gg = detail::tanh_arr(gates.middleCols(2 * h, h).array());
    Eigen::ArrayXXd og = detail::sigm(gates.rightCols(h).array());
    Eigen::ArrayXXd c = fg * cprev + ig * gg;
    hprev = (og * detail::tanh_arr(c)).matrix();
    auto cc = cache->middleRows(t * m, m);
    cc.leftCols(h) = ig.matrix();
    cc.middleCols(h, h) = fg.matrix();
    cc.middleCols(2 * h, h) = gg.matrix();
    cc.middleCols(3 * h, h) = og.matrix();
    cc.rightCols(h) = c.matrix();
    out.middleRows(t * m, m) = hprev;
    cprev = std::move(c);
  }

  return x.tape->record(std::move(out), {x, p.w_ih, p.w_hh, p.b_ih, p.b_hh},
                        [x, p, steps, m, h, cache](Tape& t, const Mat& g, const Mat& hs) {
                          const Mat& whh = p.w_hh.value();
                          Mat dgates(hs.rows(), 4 * h);
                          Mat dh_next = Mat::Zero(m, h);
                          Eigen::ArrayXXd dc_next = Eigen::ArrayXXd::Zero(m, h);
                          for (Eigen::Index s = steps - 1; s >= 0; --s) {
                            const auto cc = cache->middleRows(s * m, m);
                            Eigen::ArrayXXd ig = cc.leftCols(h).array();
                            Eigen::ArrayXXd fg = cc.middleCols(h, h).array();
                            Eigen::ArrayXXd gg = cc.middleCols(2 * h, h).array();
                            Eigen::ArrayXXd og = cc.middleCols(3 * h, h).array();
                            Eigen::ArrayXXd c = cc.rightCols(h).array();
                            Eigen::ArrayXXd cp = s > 0 ? Eigen::ArrayXXd(cache->middleRows((s - 1) * m, m).rightCols(h).array())
                                                       : Eigen::ArrayXXd::Zero(m, h);
                            Eigen::ArrayXXd dh = g.middleRows(s * m, m).array() + dh_next.array();
                            Eigen::ArrayXXd tc = detail::tanh_arr(c);
                            Eigen::ArrayXXd dog = dh * tc;
                            Eigen::ArrayXXd dc = dh * og * (1.0 - tc.square()) + dc_next;
                            auto d = dgates.middleRows(s * m, m);
                            d.leftCols(h) = (dc * gg * ig * (1.0 - ig)).matrix();
                            d.middleCols(h, h) = (dc * cp * fg * (1.0 - fg)).matrix();
                            d.middleCols(2 * h, h) = (dc * ig * (1.0 - gg.square())).matrix();
                            d.rightCols(h) = (dog * og * (1.0 - og)).matrix();
                            dc_next = dc * fg;
                            dh_next.noalias() = d * whh.transpose();
                          }
                          if (t.requires_grad(x)) {
                            Mat dx(hs.rows(), x.value().cols());
                            dx.noalias() = dgates * p.w_ih.value().transpose();
                            t.accumulate(x, dx);
                          }
                          if (t.requires_grad(p.w_ih)) {
                            Mat dw(x.value().cols(), 4 * h);
                            dw.noalias() = x.value().transpose() * dgates;
                            t.accumulate(p.w_ih, dw);
                          }
                          Mat db = dgates.colwise().sum();
                          t.accumulate(p.b_ih, db);
                          t.accumulate(p.b_hh, db);
                          if (t.requires_grad(p.w_hh)) {
                            Mat dw(h, 4 * h);
                            dw.noalias() = hs.topRows((steps - 1) * m).transpose() * dgates.bottomRows((steps - 1) * m);
                            t.accumulate(p.w_hh, dw);
                          }
                        });
}

/// Stacked GRU: layer l consumes layer l-1's full state sequence; returns the
/// last layer's final state [M x hidden].
inline Var gru_sequence(Var x, const std::vector<RecurrentVars>& layers, Eigen::Index steps) {
  if (layers.empty()) throw ShapeError("gru_sequence: at least one layer required");
  Var seq = x;
  for (const auto& l : layers) seq = gru_layer(seq, l, steps);
  const Eigen::Index m = seq.rows() / steps;
  return ad::slice_rows(seq, (steps - 1) * m, m);
}

inline Var lstm_sequence(Var x, const std::vector<RecurrentVars>& layers, Eigen::Index steps) {
  if (layers.empty()) throw ShapeError("lstm_sequence: at least one layer required");
  Var seq = x;
  for (const auto& l : layers) seq = lstm_layer(seq, l, steps);
  const Eigen::Index m = seq.rows() / steps;
  return ad::slice_rows(seq, (steps - 1) * m, m);
}

// ---------------------------------------------------------------------------
// Learned sparse graphs
// ---------------------------------------------------------------------------

/// Gumbel-TopK draw of K distinct neighbors for node `self` from the
/// categorical softmax(scores) with `self` excluded. With rng == nullptr the
/// noise is zero and the result is the deterministic top-K (ties by index).
/// `noise_out`, when given, receives the perturbation used per column.
inline std::vector<int> gumbel_topk_neighbors(const Eigen::Ref<const Eigen::RowVectorXd>& scores, int self,
                                              int k, Rng* rng, Eigen::RowVectorXd* noise_out = nullptr) {
  const int n = static_cast<int>(scores.size());
  if (k < 0 || k > n - 1) throw std::out_of_range("gumbel_topk_neighbors: K=" + std::to_string(k) +
                                                  " outside [0, " + std::to_string(n - 1) + "]");
  Eigen::RowVectorXd noise = Eigen::RowVectorXd::Zero(n);
  std::vector<double> pert(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    if (rng != nullptr) noise(j) = rng->gumbel();
    pert[static_cast<std::size_t>(j)] =
        j == self ? -std::numeric_limits<double>::infinity() : scores(j) + noise(j);
  }
  if (noise_out != nullptr) *noise_out = noise;
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return pert[static_cast<std::size_t>(a)] > pert[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// One draw of a K-nearest learned graph over N nodes.
struct GraphSample {
  Mat noise;                               // Gumbel perturbation [N x N] (zero at inference)
  std::vector<std::vector<int>> neighbors; // M_i, |M_i| = K, i not in M_i
  Mat hard;                                // 0/1 adjacency
};

/// Draws neighbor sets for every row of `scores`. `rng == nullptr` gives the
/// deterministic top-K of the scores.
inline GraphSample sample_graph(const Mat& scores, int k, Rng* rng) {
  const Eigen::Index n = scores.rows();
  if (scores.cols() != n) throw ShapeError("sample_graph: score matrix must be square");
  GraphSample s;
  s.noise = Mat::Zero(n, n);
  s.hard = Mat::Zero(n, n);
  s.neighbors.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd nz;
    s.neighbors[static_cast<std::size_t>(i)] =
        gumbel_topk_neighbors(scores.row(i), static_cast<int>(i), k, rng, &nz);
    s.noise.row(i) = nz;
    for (int j : s.neighbors[static_cast<std::size_t>(i)]) s.hard(i, j) = 1.0;
  }
  return s;
}

/// Softmax relaxation over Gumbel-perturbed scores, self entries masked out.
inline Var relaxed_adjacency(Var scores, const GraphSample& sample, double temperature) {
  Tape& tape = *scores.tape;
  const Eigen::Index n = scores.rows();
  Mat shift = sample.noise / temperature;
  for (Eigen::Index i = 0; i < n; ++i) shift(i, i) = -std::numeric_limits<double>::infinity();
  Var logits = ad::add(ad::scale(scores, 1.0 / temperature), tape.constant(std::move(shift)));
  return ad::softmax_rows(logits);
}

/// Hard 0/1 adjacency in the forward pass; gradients reach `scores` through the
/// relaxed softmax weights (straight-through). `anchor` switches to the
/// differentiable surrogate hard + (soft - anchor) for verification.
inline Var straight_through_adjacency(Var scores, const GraphSample& sample, double temperature,
                                      const Mat* anchor = nullptr) {
  Var soft = relaxed_adjacency(scores, sample, temperature);
  return ad::straight_through(sample.hard, soft, anchor);
}

/// P = D^-1 A (rows with no neighbor stay zero).
inline Var transition_matrix(Var adjacency) { return ad::row_normalize(adjacency); }

inline void check_row_stochastic(const Mat& p, double tol = 1e-6) {
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double s = p.row(r).sum();
    if (std::abs(s - 1.0) > tol && !(p.row(r).cwiseAbs().maxCoeff() == 0.0))
      throw std::invalid_argument("transition matrix row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

// ---------------------------------------------------------------------------
// Diffusion graph convolution
// ---------------------------------------------------------------------------

struct DiffusionVars {
  std::vector<Var> forward;  // W^(0..S), each [d_in x d_out]
  std::vector<Var> reverse;  // W_rev^(1..S), empty when unidirectional
};

inline void add_diffusion(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out, int steps,
                          bool bidirectional, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (int s = 0; s <= steps; ++s)
    store.add(prefix + ".w" + std::to_string(s), init::uniform(in, out, bound, rng), init::uniform_tag(bound));
  if (bidirectional)
    for (int s = 1; s <= steps; ++s)
      store.add(prefix + ".w_rev" + std::to_string(s), init::uniform(in, out, bound, rng), init::uniform_tag(bound));
}

inline DiffusionVars bind_diffusion(Tape& tape, const ParamStore& store, const std::string& prefix, int steps,
                                    bool bidirectional) {
  DiffusionVars d;
  for (int s = 0; s <= steps; ++s) d.forward.push_back(tape.param(store, prefix + ".w" + std::to_string(s)));
  if (bidirectional)
    for (int s = 1; s <= steps; ++s) d.reverse.push_back(tape.param(store, prefix + ".w_rev" + std::to_string(s)));
  return d;
}

/// relu( sum_{s=0..S} P^s H W^(s) + sum_{s=1..S} P_rev^s H W_rev^(s) ), with H
/// blocked as `blocks` groups of N rows. `p_rev` may be null (unidirectional).
inline Var diffusion_conv(Var h, Var p, const Var* p_rev, const DiffusionVars& w, Eigen::Index blocks) {
  const Eigen::Index n = p.rows();
  if (h.rows() != n * blocks) throw ShapeError("diffusion_conv: feature rows do not match graph size");
  check_row_stochastic(p.value());
  const int steps = static_cast<int>(w.forward.size()) - 1;
  if (steps < 0) throw ShapeError("diffusion_conv: no weights");
  Var acc = ad::matmul(h, w.forward[0]);
  Var x = h;
  for (int s = 1; s <= steps; ++s) {
    x = ad::block_left_matmul(p, x, blocks);
    acc = ad::add(acc, ad::matmul(x, w.forward[static_cast<std::size_t>(s)]));
  }
  if (p_rev != nullptr) {
    check_row_stochastic(p_rev->value());
    if (static_cast<int>(w.reverse.size()) != steps) throw ShapeError("diffusion_conv: reverse weight count");
    Var xr = h;
    for (int s = 1; s <= steps; ++s) {
      xr = ad::block_left_matmul(*p_rev, xr, blocks);
      acc = ad::add(acc, ad::matmul(xr, w.reverse[static_cast<std::size_t>(s - 1)]));
    }
  }
  return ad::relu(acc);
}

// ---------------------------------------------------------------------------
// Normalization and attention
// ---------------------------------------------------------------------------

inline Var layer_norm(Var x, Var gain, Var shift, double eps) {
  return ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(x, eps), gain), shift);
}

struct AttentionVars {
  LinearVars query, key, value;
  Var gain, shift;
};

inline void add_attention(ParamStore& store, const std::string& prefix, Eigen::Index d, Rng& rng) {
  add_linear(store, prefix + ".query", d, d, rng);
  add_linear(store, prefix + ".key", d, d, rng);
  add_linear(store, prefix + ".value", d, d, rng);
  store.add(prefix + ".norm.gain", Mat::Ones(1, d), "ones");
  store.add(prefix + ".norm.shift", Mat::Zero(1, d), "zeros");
}

inline AttentionVars bind_attention(Tape& tape, const ParamStore& store, const std::string& prefix) {
  return {bind_linear(tape, store, prefix + ".query"), bind_linear(tape, store, prefix + ".key"),
          bind_linear(tape, store, prefix + ".value"), tape.param(store, prefix + ".norm.gain"),
          tape.param(store, prefix + ".norm.shift")};
}

inline constexpr double kLayerNormEps = 1e-5;

/// Single-head scaled dot-product self-attention within each block, followed
/// by residual addition and layer normalization (post-norm).
inline Var self_attention(Var x, const AttentionVars& a, Eigen::Index blocks, double eps = kLayerNormEps) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Var q = linear(x, a.query);
  Var k = linear(x, a.key);
  Var v = linear(x, a.value);
  Var weights = ad::softmax_rows(ad::scale(ad::block_matmul_abt(q, k, blocks), scale));
  Var attended = ad::block_matmul(weights, v, blocks);
  return layer_norm(ad::add(x, attended), a.gain, a.shift, eps);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  std::size_t coordinates = 0;
};

/// Relative error with a small absolute floor so exactly-zero gradients
/// compare on absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `fn` with central differences over every
/// coordinate of every parameter in `store`.
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& fn, ParamStore& store, double eps = 1e-5,
                                  double floor = 1e-3) {
  store.zero_grad();
  {
    Tape tape;
    Var out = fn(tape);
    tape.backward(out);
    tape.accumulate_into(store);
  }
  auto eval = [&]() {
    Tape tape;
    return fn(tape).value()(0, 0);
  };
  GradCheckResult res;
  for (auto& p : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& w = p.value.data()[i];
      const double w0 = w;
      w = w0 + eps;
      const double fp = eval();
      w = w0 - eps;
      const double fm = eval();
      w = w0;
      const double num = (fp - fm) / (2.0 * eps);
      const double err = relative_error(p.grad.data()[i], num, floor);
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace hstgnn
