#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "hstgnn/data.hpp"
#include "hstgnn/nn.hpp"

namespace hstgnn {

enum class Mode { Train, Infer };

/// Per-call options. Graphs are numbered in the order a model builds them.
struct ForwardContext {
  Mode mode = Mode::Infer;
  Rng* rng = nullptr;  // required in train mode
  /// Reuse these neighbor draws instead of sampling (frozen noise).
  const std::vector<GraphSample>* frozen = nullptr;
  /// Anchors for the straight-through surrogate hard + (soft - anchor).
  const std::vector<Mat>* anchors = nullptr;
  std::vector<GraphSample>* drawn = nullptr;  // receives the draws used
  std::vector<Mat>* soft_out = nullptr;       // receives relaxed adjacency values
  std::size_t graph_counter = 0;
};

/// Straight-through adjacency over learned scores `phi`, K clamped to N - 1.
inline Var learned_adjacency(Var phi, int k, double temperature, ForwardContext& ctx) {
  Tape& tape = *phi.tape;
  const Eigen::Index n = phi.rows();
  const std::size_t g = ctx.graph_counter++;
  const int keff = std::min<int>(k, static_cast<int>(n) - 1);
  GraphSample sample;
  if (ctx.frozen != nullptr) {
    sample = ctx.frozen->at(g);
  } else {
    if (ctx.mode == Mode::Train && ctx.rng == nullptr) throw std::invalid_argument("train-mode forward needs an rng");
    sample = sample_graph(phi.value(), keff, ctx.mode == Mode::Train ? ctx.rng : nullptr);
  }
  if (ctx.drawn != nullptr) ctx.drawn->push_back(sample);
  if (ctx.mode == Mode::Infer && ctx.anchors == nullptr && ctx.soft_out == nullptr) return tape.constant(sample.hard);
  Var soft = relaxed_adjacency(phi, sample, temperature);
  if (ctx.soft_out != nullptr) ctx.soft_out->push_back(soft.value());
  const Mat* anchor = ctx.anchors != nullptr ? &ctx.anchors->at(g) : nullptr;
  return ad::straight_through(sample.hard, soft, anchor);
}

// ---------------------------------------------------------------------------
// Input layouts
// ---------------------------------------------------------------------------

/// [B x N x T] -> time-major column [T * B * N x 1], row t * B * N + b * N + i.
inline Mat to_time_major(const Tensor3& x) {
  const std::size_t b = x.dim(0), n = x.dim(1), t = x.dim(2);
  Mat out(static_cast<Eigen::Index>(t * b * n), 1);
  double* o = out.data();
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t i = 0; i < n; ++i) *o++ = x(k, i, s);
  return out;
}

/// Concatenates the per-type windows along the node axis in branch order.
inline Tensor3 stack_types(const WindowBatch& batch, const std::vector<SensorType>& types) {
  std::size_t n = 0, b = batch.size(), t = 0;
  for (SensorType ty : types) {
    n += batch.x(ty).dim(1);
    if (batch.x(ty).dim(1) > 0) t = batch.x(ty).dim(2);
  }
  Tensor3 out(b, n, t);
  for (std::size_t k = 0; k < b; ++k) {
    std::size_t off = 0;
    for (SensorType ty : types) {
      const Tensor3& x = batch.x(ty);
      for (std::size_t i = 0; i < x.dim(1); ++i)
        for (std::size_t s = 0; s < t; ++s) out(k, off + i, s) = x(k, i, s);
      off += x.dim(1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model interface
// ---------------------------------------------------------------------------

class Model {
 public:
  virtual ~Model() = default;

  /// Predictions [B x D] in standardized target units.
  virtual Var forward(Tape& tape, const WindowBatch& batch, ForwardContext& ctx) const = 0;
  /// Input window length T.
  virtual int window() const = 0;

  Mat predict(const WindowBatch& batch) const {
    Tape tape;
    ForwardContext ctx;
    return forward(tape, batch, ctx).value();
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const SensorNetworkSchema& schema() const { return schema_; }
  const std::string& name() const { return name_; }

 protected:
  Model(std::string name, SensorNetworkSchema schema) : name_(std::move(name)), schema_(std::move(schema)) {}

  void check_batch(const WindowBatch& batch, Eigen::Index window) const {
    for (SensorType t : kBranchOrder) {
      const Tensor3& x = batch.x(t);
      if (static_cast<int>(x.dim(1)) != schema_.count(t))
        throw ShapeError(name_ + ": batch has " + std::to_string(x.dim(1)) + " " + type_name(t) + " sensors, schema " +
                         std::to_string(schema_.count(t)));
      if (x.dim(0) != batch.size()) throw ShapeError(name_ + ": batch size mismatch");
      if (x.dim(1) > 0 && static_cast<Eigen::Index>(x.dim(2)) != window)
        throw ShapeError(name_ + ": window length " + std::to_string(x.dim(2)) + " != " + std::to_string(window));
    }
  }

  std::string name_;
  SensorNetworkSchema schema_;
  ParamStore params_;
};

// ---------------------------------------------------------------------------
// HSTGNN
// ---------------------------------------------------------------------------

struct HstgnnConfig {
  int d = 16;
  int gru_layers = 2;
  int d_h = 16;
  int k = 8;
  int diffusion_steps = 2;
  int gnn_layers = 1;
  int window = 16;
  bool bidirectional = true;
  double temperature = 0.5;
  double embedding_std = 0.01;
};

inline std::string branch_prefix(SensorType t) {
  return t == SensorType::Temperature ? "temp" : (t == SensorType::Pressure ? "press" : "flow");
}

inline void add_gru_stack(ParamStore& store, const std::string& prefix, int in, int hidden, int layers, Rng& rng) {
  for (int l = 0; l < layers; ++l)
    add_recurrent(store, prefix + ".l" + std::to_string(l), l == 0 ? in : hidden, hidden, 3, rng);
}

inline std::vector<RecurrentVars> bind_gru_stack(Tape& tape, const ParamStore& store, const std::string& prefix,
                                                 int layers) {
  std::vector<RecurrentVars> v;
  for (int l = 0; l < layers; ++l) v.push_back(bind_recurrent(tape, store, prefix + ".l" + std::to_string(l)));
  return v;
}

/// z[t, b, i, :] = x[b, i, t] * w + bias + e_i, time-major rows.
inline Var encode_branch(Tape& tape, const Tensor3& x, const LinearVars& enc, Var embedding) {
  if (static_cast<Eigen::Index>(x.dim(1)) != embedding.rows())
    throw ShapeError("encode_branch: " + std::to_string(x.dim(1)) + " sensors but " +
                     std::to_string(embedding.rows()) + " embeddings");
  Var z = linear(tape.constant(to_time_major(x)), enc);
  return ad::add(z, ad::tile_rows(embedding, static_cast<Eigen::Index>(x.dim(0) * x.dim(2))));
}

/// Closed-form parameter count for a schema with per-type counts `n_m`.
inline std::size_t hstgnn_param_count(const HstgnnConfig& c, const std::vector<int>& n_m, int d_out) {
  const std::size_t d = static_cast<std::size_t>(c.d), h = static_cast<std::size_t>(c.d_h);
  const std::size_t s = static_cast<std::size_t>(c.diffusion_steps);
  std::size_t total = 0, n = 0;
  for (int nm_i : n_m) {
    if (nm_i == 0) continue;
    const std::size_t nm = static_cast<std::size_t>(nm_i);
    n += nm;
    total += 2 * d;                                                // encoder
    total += nm * d;                                               // embeddings
    total += d * 3 * h + h * 3 * h + 6 * h;                        // first GRU layer
    total += static_cast<std::size_t>(c.gru_layers - 1) * (2 * h * 3 * h + 6 * h);
    total += nm * nm;                                              // scores
    total += static_cast<std::size_t>(c.gnn_layers) * ((s + 1) + (c.bidirectional ? s : 0)) * h * h;
  }
  total += 3 * (h * h + h) + 2 * h;                                // attention + norm
  total += n * h * static_cast<std::size_t>(d_out) + static_cast<std::size_t>(d_out);  // decoder
  return total;
}

/// Attention over the blocked node features followed by the flatten decoder.
inline Var fuse_and_decode(const std::vector<Var>& branch_out, const AttentionVars& att, const LinearVars& dec,
                           Eigen::Index batch) {
  const Eigen::Index width = branch_out.front().cols();
  for (const Var& v : branch_out)
    if (v.cols() != width) throw ShapeError("fuse_and_decode: branch widths differ");
  Var u = branch_out.size() == 1 ? branch_out.front() : ad::concat_blocks(branch_out, batch);
  Var fused = self_attention(u, att, batch);
  Var flat = ad::reshape(fused, batch, fused.rows() / batch * width);
  return linear(flat, dec);
}

class Hstgnn : public Model {
 public:
  Hstgnn(const SensorNetworkSchema& schema, const HstgnnConfig& cfg, std::uint64_t seed)
      : Model("hstgnn", schema), cfg_(cfg), types_(schema.present_types()) {
    if (types_.empty()) throw std::invalid_argument("hstgnn: schema has no input sensors");
    if (schema.d_out() == 0) throw std::invalid_argument("hstgnn: schema has no targets");
    Rng rng(seed);
    for (SensorType t : types_) {
      const std::string p = branch_prefix(t);
      const int nm = schema.count(t);
      add_linear(params_, p + ".encoder", 1, cfg.d, rng);
      params_.add(p + ".embedding", init::normal(nm, cfg.d, cfg.embedding_std, rng),
                  "normal(0," + std::to_string(cfg.embedding_std) + ")");
      add_gru_stack(params_, p + ".gru", cfg.d, cfg.d_h, cfg.gru_layers, rng);
      params_.add(p + ".phi", Mat::Zero(nm, nm), "zeros");
      for (int l = 0; l < cfg.gnn_layers; ++l)
        add_diffusion(params_, p + ".diffusion.l" + std::to_string(l), cfg.d_h, cfg.d_h, cfg.diffusion_steps,
                      cfg.bidirectional, rng);
    }
    add_attention(params_, "attention", cfg.d_h, rng);
    add_linear(params_, "decoder", static_cast<Eigen::Index>(schema.n_inputs()) * cfg.d_h, schema.d_out(), rng);
  }

  const HstgnnConfig& config() const { return cfg_; }
  int window() const override { return cfg_.window; }
  const std::vector<SensorType>& branch_types() const { return types_; }

  /// Spatial output of one branch, [B * N_m x d_h] blocked by batch element.
  Var branch_forward(Tape& tape, SensorType t, const Tensor3& x, ForwardContext& ctx) const {
    const std::string p = branch_prefix(t);
    const Eigen::Index b = static_cast<Eigen::Index>(x.dim(0));
    Var z = encode_branch(tape, x, bind_linear(tape, params_, p + ".encoder"), tape.param(params_, p + ".embedding"));
    Var h = gru_sequence(z, bind_gru_stack(tape, params_, p + ".gru", cfg_.gru_layers), cfg_.window);
    Var a = learned_adjacency(tape.param(params_, p + ".phi"), cfg_.k, cfg_.temperature, ctx);
    Var pf = transition_matrix(a);
    Var pr = cfg_.bidirectional ? transition_matrix(ad::transpose(a)) : pf;
    for (int l = 0; l < cfg_.gnn_layers; ++l) {
      const auto w = bind_diffusion(tape, params_, p + ".diffusion.l" + std::to_string(l), cfg_.diffusion_steps,
                                    cfg_.bidirectional);
      h = diffusion_conv(h, pf, cfg_.bidirectional ? &pr : nullptr, w, b);
    }
    return h;
  }

  Var forward(Tape& tape, const WindowBatch& batch, ForwardContext& ctx) const override {
    check_batch(batch, cfg_.window);
    ctx.graph_counter = 0;
    std::vector<Var> outs;
    for (SensorType t : types_) outs.push_back(branch_forward(tape, t, batch.x(t), ctx));
    return fuse_and_decode(outs, bind_attention(tape, params_, "attention"), bind_linear(tape, params_, "decoder"),
                           static_cast<Eigen::Index>(batch.size()));
  }

 private:
  HstgnnConfig cfg_;
  std::vector<SensorType> types_;
};

/// One shared linear encoder and GRU over every sensor, then attention and
/// the decoder. No branches, learned graphs or node embeddings.
class SimplifiedHstgnn : public Model {
 public:
  SimplifiedHstgnn(const SensorNetworkSchema& schema, const HstgnnConfig& cfg, std::uint64_t seed)
      : Model("simplified", schema), cfg_(cfg), types_(schema.present_types()) {
    Rng rng(seed);
    add_linear(params_, "encoder", 1, cfg.d, rng);
    add_gru_stack(params_, "gru", cfg.d, cfg.d_h, cfg.gru_layers, rng);
    add_attention(params_, "attention", cfg.d_h, rng);
    add_linear(params_, "decoder", static_cast<Eigen::Index>(schema.n_inputs()) * cfg.d_h, schema.d_out(), rng);
  }

  int window() const override { return cfg_.window; }

  Var forward(Tape& tape, const WindowBatch& batch, ForwardContext& ctx) const override {
    check_batch(batch, cfg_.window);
    ctx.graph_counter = 0;
    const Tensor3 x = stack_types(batch, types_);
    Var z = linear(tape.constant(to_time_major(x)), bind_linear(tape, params_, "encoder"));
    Var h = gru_sequence(z, bind_gru_stack(tape, params_, "gru", cfg_.gru_layers), cfg_.window);
    return fuse_and_decode({h}, bind_attention(tape, params_, "attention"), bind_linear(tape, params_, "decoder"),
                           static_cast<Eigen::Index>(batch.size()));
  }

 private:
  HstgnnConfig cfg_;
  std::vector<SensorType> types_;
};

}  // namespace hstgnn
