#pragma once

// Homogeneous comparison models. Every baseline treats all input sensors as
// one node set: one recurrent stack, one convolution or one learned graph.

#include <string>
#include <vector>

#include "hstgnn/model.hpp"

namespace hstgnn {

enum class BaselineKind { Lstm, Cnn1d, Gcn, Dgc, GruGcn };

struct BaselineConfig {
  int window = 16;
  // LSTM
  int lstm_hidden = 256;
  int lstm_layers = 2;
  // 1D-CNN
  int cnn_filters = 64;
  int cnn_kernel = 3;
  // graph baselines
  int node_dim = 16;
  int k = 8;
  int diffusion_steps = 2;
  bool bidirectional = true;
  double temperature = 0.5;
  double embedding_std = 0.01;
  int gru_hidden = 16;
  int gru_layers = 2;
};

inline std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::Lstm: return "lstm";
    case BaselineKind::Cnn1d: return "cnn1d";
    case BaselineKind::Gcn: return "gcn";
    case BaselineKind::Dgc: return "dgc";
    case BaselineKind::GruGcn: return "gru-gcn";
  }
  return "?";
}

/// All sensors in branch order, [B x N x T].
inline Tensor3 all_inputs(const WindowBatch& batch) {
  return stack_types(batch, {kBranchOrder.begin(), kBranchOrder.end()});
}

/// [B x N x T] -> rows t * B + b, one column per sensor.
inline Mat to_step_major(const Tensor3& x) {
  const std::size_t b = x.dim(0), n = x.dim(1), t = x.dim(2);
  Mat out(static_cast<Eigen::Index>(t * b), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(s * b + k), static_cast<Eigen::Index>(i)) = x(k, i, s);
  return out;
}

/// [B x N x T] -> rows b * N + i holding the node's T-window.
inline Mat to_node_windows(const Tensor3& x) {
  const std::size_t b = x.dim(0), n = x.dim(1), t = x.dim(2);
  Mat out(static_cast<Eigen::Index>(b * n), static_cast<Eigen::Index>(t));
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < t; ++s) out(static_cast<Eigen::Index>(k * n + i), static_cast<Eigen::Index>(s)) = x(k, i, s);
  return out;
}

/// Valid-convolution patches: row b * P + p, column c * kernel + j = x[b, c, p + j].
inline Mat im2col(const Tensor3& x, int kernel) {
  const std::size_t b = x.dim(0), n = x.dim(1), t = x.dim(2);
  if (kernel <= 0 || static_cast<std::size_t>(kernel) > t)
    throw ShapeError("im2col: window of " + std::to_string(t) + " steps is shorter than kernel " +
                     std::to_string(kernel));
  const std::size_t kk = static_cast<std::size_t>(kernel), p = t - kk + 1;
  Mat out(static_cast<Eigen::Index>(b * p), static_cast<Eigen::Index>(n * kk));
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t q = 0; q < p; ++q)
      for (std::size_t c = 0; c < n; ++c)
        for (std::size_t j = 0; j < kk; ++j)
          out(static_cast<Eigen::Index>(k * p + q), static_cast<Eigen::Index>(c * kk + j)) = x(k, c, q + j);
  return out;
}

/// D~^-1/2 (A + I) D~^-1/2 with D~ the row sums of A + I.
inline Var gcn_normalize(Var a) {
  Tape& tape = *a.tape;
  const Eigen::Index n = a.rows();
  Var at = ad::add(a, tape.constant(Mat::Identity(n, n)));
  Var dinv = ad::pow_scalar(ad::row_sum(at), -0.5);
  return ad::mul_rowvec(ad::mul_colvec(at, dinv), ad::transpose(dinv));
}

/// relu(A_hat H W) per block.
inline Var gcn_layer(Var h, Var a_hat, Var weight, Eigen::Index blocks) {
  return ad::relu(ad::matmul(ad::block_left_matmul(a_hat, h, blocks), weight));
}

class Baseline : public Model {
 public:
  Baseline(BaselineKind kind, const SensorNetworkSchema& schema, const BaselineConfig& cfg, std::uint64_t seed)
      : Model(baseline_name(kind), schema), kind_(kind), cfg_(cfg) {
    const Eigen::Index n = schema.n_inputs();
    if (n == 0) throw std::invalid_argument(name_ + ": schema has no input sensors");
    if (schema.d_out() == 0) throw std::invalid_argument(name_ + ": schema has no targets");
    Rng rng(seed);
    const Eigen::Index d = cfg.node_dim;
    switch (kind) {
      case BaselineKind::Lstm:
        for (int l = 0; l < cfg.lstm_layers; ++l)
          add_recurrent(params_, "lstm.l" + std::to_string(l), l == 0 ? n : cfg.lstm_hidden, cfg.lstm_hidden, 4, rng);
        add_linear(params_, "decoder", cfg.lstm_hidden, schema.d_out(), rng);
        break;
      case BaselineKind::Cnn1d:
        if (cfg.cnn_kernel > cfg.window) throw ShapeError("cnn1d: window shorter than kernel");
        add_linear(params_, "conv", n * cfg.cnn_kernel, cfg.cnn_filters, rng);
        add_linear(params_, "decoder", cfg.cnn_filters, schema.d_out(), rng);
        break;
      case BaselineKind::Gcn:
      case BaselineKind::Dgc:
        add_linear(params_, "encoder", cfg.window, d, rng);
        params_.add("embedding", init::normal(n, d, cfg.embedding_std, rng),
                    "normal(0," + std::to_string(cfg.embedding_std) + ")");
        params_.add("phi", Mat::Zero(n, n), "zeros");
        if (kind == BaselineKind::Gcn) {
          const double bound = 1.0 / std::sqrt(static_cast<double>(d));
          params_.add("gcn.weight", init::uniform(d, d, bound, rng), init::uniform_tag(bound));
        } else {
          add_diffusion(params_, "diffusion", d, d, cfg.diffusion_steps, cfg.bidirectional, rng);
        }
        add_linear(params_, "decoder", n * d, schema.d_out(), rng);
        break;
      case BaselineKind::GruGcn: {
        for (int l = 0; l < cfg.gru_layers; ++l)
          add_recurrent(params_, "gru.l" + std::to_string(l), l == 0 ? 1 : cfg.gru_hidden, cfg.gru_hidden, 3, rng);
        params_.add("phi", Mat::Zero(n, n), "zeros");
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.gru_hidden));
        params_.add("gcn.weight", init::uniform(cfg.gru_hidden, cfg.gru_hidden, bound, rng), init::uniform_tag(bound));
        add_linear(params_, "decoder", n * cfg.gru_hidden, schema.d_out(), rng);
        break;
      }
    }
  }

  BaselineKind kind() const { return kind_; }
  const BaselineConfig& config() const { return cfg_; }
  int window() const override { return cfg_.window; }

  Var forward(Tape& tape, const WindowBatch& batch, ForwardContext& ctx) const override {
    check_batch(batch, cfg_.window);
    ctx.graph_counter = 0;
    const Tensor3 x = all_inputs(batch);
    const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
    switch (kind_) {
      case BaselineKind::Lstm: {
        std::vector<RecurrentVars> layers;
        for (int l = 0; l < cfg_.lstm_layers; ++l)
          layers.push_back(bind_recurrent(tape, params_, "lstm.l" + std::to_string(l)));
        Var h = lstm_sequence(tape.constant(to_step_major(x)), layers, cfg_.window);
        return linear(h, bind_linear(tape, params_, "decoder"));
      }
      case BaselineKind::Cnn1d: {
        Var conv = ad::relu(linear(tape.constant(im2col(x, cfg_.cnn_kernel)), bind_linear(tape, params_, "conv")));
        return linear(ad::block_row_mean(conv, b), bind_linear(tape, params_, "decoder"));
      }
      case BaselineKind::Gcn:
      case BaselineKind::Dgc: {
        Var h = linear(tape.constant(to_node_windows(x)), bind_linear(tape, params_, "encoder"));
        h = ad::add(h, ad::tile_rows(tape.param(params_, "embedding"), b));
        Var a = learned_adjacency(tape.param(params_, "phi"), cfg_.k, cfg_.temperature, ctx);
        if (kind_ == BaselineKind::Gcn) {
          h = gcn_layer(h, gcn_normalize(a), tape.param(params_, "gcn.weight"), b);
        } else {
          Var pf = transition_matrix(a);
          Var pr = cfg_.bidirectional ? transition_matrix(ad::transpose(a)) : pf;
          const auto w = bind_diffusion(tape, params_, "diffusion", cfg_.diffusion_steps, cfg_.bidirectional);
          h = diffusion_conv(h, pf, cfg_.bidirectional ? &pr : nullptr, w, b);
        }
        return decode(tape, h, b);
      }
      case BaselineKind::GruGcn: {
        std::vector<RecurrentVars> layers;
        for (int l = 0; l < cfg_.gru_layers; ++l)
          layers.push_back(bind_recurrent(tape, params_, "gru.l" + std::to_string(l)));
        Var h = gru_sequence(tape.constant(to_time_major(x)), layers, cfg_.window);
        Var a = learned_adjacency(tape.param(params_, "phi"), cfg_.k, cfg_.temperature, ctx);
        h = gcn_layer(h, gcn_normalize(a), tape.param(params_, "gcn.weight"), b);
        return decode(tape, h, b);
      }
    }
    throw std::logic_error("unknown baseline");
  }

 private:
  Var decode(Tape& tape, Var h, Eigen::Index b) const {
    return linear(ad::reshape(h, b, h.rows() / b * h.cols()), bind_linear(tape, params_, "decoder"));
  }

  BaselineKind kind_;
  BaselineConfig cfg_;
};

}  // namespace hstgnn
