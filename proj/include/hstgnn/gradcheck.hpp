#pragma once

// Finite-difference suite over every differentiable building block and tiny
// instances of every model.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "hstgnn/models.hpp"
#include "hstgnn/train.hpp"

namespace hstgnn {

struct GradCheckCase {
  std::string name;
  double tolerance = 1e-6;
  GradCheckResult result;
  bool passed() const { return result.max_rel_error < tolerance; }
};

/// Input sensors t0.., p0.., f0.. followed by `d_out` targets y0.. (alternating
/// temperature and flow).
inline SensorNetworkSchema tiny_schema(int n_temp, int n_press, int n_flow, int d_out) {
  std::vector<SensorMeta> s;
  for (int i = 0; i < n_temp; ++i) s.push_back({"t" + std::to_string(i), SensorType::Temperature, Role::Input, "degC"});
  for (int i = 0; i < n_press; ++i) s.push_back({"p" + std::to_string(i), SensorType::Pressure, Role::Input, "bar"});
  for (int i = 0; i < n_flow; ++i) s.push_back({"f" + std::to_string(i), SensorType::Flow, Role::Input, "l/min"});
  for (int j = 0; j < d_out; ++j)
    s.push_back({"y" + std::to_string(j), j % 2 == 0 ? SensorType::Temperature : SensorType::Flow, Role::Target, ""});
  return SensorNetworkSchema(std::move(s));
}

/// Random standardized-scale batch for `schema`.
inline WindowBatch random_batch(const SensorNetworkSchema& schema, std::size_t b, std::size_t window, Rng& rng) {
  WindowBatch w;
  for (SensorType t : kBranchOrder) {
    Tensor3& x = w.x(t);
    x = Tensor3(b, static_cast<std::size_t>(schema.count(t)), window);
    for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
  }
  w.y = init::normal(static_cast<Eigen::Index>(b), schema.d_out(), 1.0, rng);
  w.ref_times.resize(b);
  for (std::size_t k = 0; k < b; ++k) w.ref_times[k] = static_cast<Eigen::Index>(k);
  return w;
}

/// Gradient check of a whole model with its graph draws frozen: one train-mode
/// pass records the samples and relaxed adjacencies, later passes reuse them as
/// straight-through anchors so the checked function is smooth in every score.
inline GradCheckResult model_grad_check(Model& model, const WindowBatch& batch, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GraphSample> drawn;
  std::vector<Mat> soft;
  {
    Tape tape;
    ForwardContext ctx;
    ctx.mode = Mode::Train;
    ctx.rng = &rng;
    ctx.drawn = &drawn;
    ctx.soft_out = &soft;
    model.forward(tape, batch, ctx);
  }
  const Mat weights = init::normal(static_cast<Eigen::Index>(batch.size()), model.schema().d_out(), 1.0, rng);
  auto fn = [&](Tape& tape) {
    ForwardContext ctx;
    ctx.mode = Mode::Train;
    ctx.frozen = &drawn;
    ctx.anchors = &soft;
    Var y = model.forward(tape, batch, ctx);
    return ad::sum(ad::mul(y, tape.constant(weights)));
  };
  return grad_check(fn, model.params());
}

/// Runs every case. Tolerances: 1e-6 for smooth non-recurrent ops, 1e-4 for
/// recurrent layers and whole models.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 7) {
  std::vector<GradCheckCase> out;
  auto add_case = [&](const std::string& name, double tol, ParamStore& store, const std::function<Var(Tape&)>& fn) {
    GradCheckCase c{name, tol, {}};
    c.result = grad_check(fn, store);
    out.push_back(c);
  };
  Rng rng(seed);
  const Mat wsum = init::normal(5, 4, 1.0, rng);

  {
    ParamStore s;
    s.add("x", init::normal(5, 3, 1.0, rng), "");
    add_linear(s, "lin", 3, 4, rng);
    add_case("linear", 1e-6, s, [&](Tape& t) {
      Var y = linear(t.param(s, "x"), bind_linear(t, s, "lin"));
      return ad::sum(ad::mul(y, t.constant(wsum)));
    });
  }
  {
    ParamStore s;
    s.add("x", init::normal(5, 4, 1.0, rng), "");
    s.add("gain", init::normal(1, 4, 1.0, rng), "");
    s.add("shift", init::normal(1, 4, 1.0, rng), "");
    add_case("layer_norm", 1e-6, s, [&](Tape& t) {
      Var y = layer_norm(t.param(s, "x"), t.param(s, "gain"), t.param(s, "shift"), kLayerNormEps);
      return ad::sum(ad::mul(y, t.constant(wsum)));
    });
  }
  {
    ParamStore s;
    s.add("x", init::normal(6, 4, 1.0, rng), "");
    add_attention(s, "att", 4, rng);
    s.at("att.norm.gain").value = init::normal(1, 4, 1.0, rng);
    s.at("att.norm.shift").value = init::normal(1, 4, 1.0, rng);
    const Mat w = init::normal(6, 4, 1.0, rng);
    add_case("self_attention", 1e-6, s, [&](Tape& t) {
      Var y = self_attention(t.param(s, "x"), bind_attention(t, s, "att"), 2);
      return ad::sum(ad::mul(y, t.constant(w)));
    });
  }
  {
    // 2 blocks of 4 nodes, S = 2, both directions; P built from positive weights.
    ParamStore s;
    s.add("h", init::normal(8, 3, 1.0, rng), "");
    s.add("a", init::uniform(4, 4, 1.0, rng).array().abs().matrix() + Mat::Constant(4, 4, 0.1), "");
    add_diffusion(s, "dc", 3, 2, 2, true, rng);
    const Mat w = init::normal(8, 2, 1.0, rng);
    add_case("diffusion_conv", 1e-6, s, [&](Tape& t) {
      Var a = t.param(s, "a");
      Var p = transition_matrix(a);
      Var pr = transition_matrix(ad::transpose(a));
      Var y = diffusion_conv(t.param(s, "h"), p, &pr, bind_diffusion(t, s, "dc", 2, true), 2);
      return ad::sum(ad::mul(y, t.constant(w)));
    });
  }
  {
    ParamStore s;
    s.add("phi", init::normal(5, 5, 1.0, rng), "");
    Rng draw(seed + 1);
    const GraphSample g = sample_graph(s.at("phi").value, 2, &draw);
    Mat anchor;
    {
      Tape t;
      anchor = relaxed_adjacency(t.param(s, "phi"), g, 0.5).value();
    }
    const Mat w = init::normal(5, 5, 1.0, rng);
    add_case("straight_through_adjacency", 1e-6, s, [&](Tape& t) {
      Var a = straight_through_adjacency(t.param(s, "phi"), g, 0.5, &anchor);
      return ad::sum(ad::mul(transition_matrix(a), t.constant(w)));
    });
  }
  {
    ParamStore s;
    s.add("yhat", init::normal(4, 3, 1.0, rng), "");
    const Mat y = init::normal(4, 3, 1.0, rng);
    add_case("mae_loss", 1e-6, s, [&](Tape& t) { return mae_loss(t.param(s, "yhat"), t.constant(y)); });
  }
  for (int gates : {3, 4}) {
    ParamStore s;
    const Eigen::Index steps = 4, m = 3;
    s.add("x", init::normal(steps * m, 2, 1.0, rng), "");
    add_recurrent(s, "l0", 2, 5, gates, rng);
    add_recurrent(s, "l1", 5, 5, gates, rng);
    const Mat w = init::normal(steps * m, 5, 1.0, rng);
    add_case(gates == 3 ? "gru_layer" : "lstm_layer", 1e-4, s, [&, gates](Tape& t) {
      Var x = t.param(s, "x");
      const auto l0 = bind_recurrent(t, s, "l0");
      const auto l1 = bind_recurrent(t, s, "l1");
      Var h = gates == 3 ? gru_layer(gru_layer(x, l0, steps), l1, steps) : lstm_layer(lstm_layer(x, l0, steps), l1, steps);
      return ad::sum(ad::mul(h, t.constant(w)));
    });
  }

  // Whole models on tiny instances. K = N_m - 1 keeps every node's in-degree
  // positive so the reverse transition matrix is well conditioned.
  const SensorNetworkSchema schema = tiny_schema(3, 2, 3, 2);
  Rng data_rng(seed + 2);
  const WindowBatch batch = random_batch(schema, 2, 4, data_rng);
  ModelSpec spec;
  spec.hstgnn.d = 3;
  spec.hstgnn.d_h = 3;
  spec.hstgnn.window = 4;
  spec.hstgnn.k = 2;
  spec.hstgnn.embedding_std = 0.5;
  spec.baseline.window = 4;
  spec.baseline.lstm_hidden = 4;
  spec.baseline.cnn_filters = 4;
  spec.baseline.node_dim = 3;
  spec.baseline.gru_hidden = 3;
  spec.baseline.k = 7;
  spec.baseline.embedding_std = 0.5;
  for (ModelKind k : {ModelKind::Hstgnn, ModelKind::Simplified, ModelKind::Lstm, ModelKind::Cnn1d, ModelKind::Gcn,
                      ModelKind::Dgc, ModelKind::GruGcn}) {
    spec.kind = k;
    auto model = make_model(spec, schema, seed + 3);
    for (auto& p : model->params())
      if (p.name.size() >= 3 && p.name.compare(p.name.size() - 3, 3, "phi") == 0)
        p.value = init::normal(p.value.rows(), p.value.cols(), 1.0, rng);
    GradCheckCase c{"model:" + model_name(k), 1e-4, {}};
    c.result = model_grad_check(*model, batch, seed + 4);
    out.push_back(c);
  }
  return out;
}

}  // namespace hstgnn
