#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are kept until the
// tape is destroyed; `backward` walks the records in reverse and each record
// pushes its output gradient into its inputs. Parameters live in a ParamStore
// and enter the tape as leaves; `accumulate_into` copies leaf gradients back.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hstgnn/tensor.hpp"

namespace hstgnn {

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  std::string init;  // initializer record, e.g. "uniform(0.25)"
};

/// Named parameter tensors with gradient accumulators of identical shape.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Mat value, std::string init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    Mat g = Mat::Zero(value.rows(), value.cols());
    params_.push_back(Param{name, std::move(value), std::move(g), std::move(init)});
    index_[name] = params_.size() - 1;
    return params_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second;
  }

  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  Param& at(const std::string& name) { return params_[index(name)]; }
  const Param& at(const std::string& name) const { return params_[index(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad, const Mat& value)>;

  Var constant(Mat v) { return push(std::move(v), false, {}); }

  /// Leaf that is not a parameter but still collects a gradient.
  Var variable(Mat v) { return push(std::move(v), true, {}); }

  /// Leaf bound to parameter `idx` of `store`; its gradient flows back in accumulate_into().
  Var param(const ParamStore& store, std::size_t idx) {
    Var v = push(store[idx].value, true, {});
    nodes_[v.id].param = static_cast<int>(idx);
    return v;
  }
  Var param(const ParamStore& store, const std::string& name) { return param(store, store.index(name)); }

  /// Records an op whose output requires a gradient iff any input does.
  Var record(Mat value, std::initializer_list<Var> inputs, Backward back) {
    bool req = false;
    for (const Var& v : inputs) req = req || nodes_[v.id].requires_grad;
    return push(std::move(value), req, req ? std::move(back) : Backward{});
  }
  Var record(Mat value, const std::vector<Var>& inputs, Backward back) {
    bool req = false;
    for (const Var& v : inputs) req = req || nodes_[v.id].requires_grad;
    return push(std::move(value), req, req ? std::move(back) : Backward{});
  }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adds `g` into the gradient of `v` (no-op for constants).
  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(Var out) {
    if (value(out).size() != 1) throw ShapeError("backward() without seed needs a scalar output");
    backward(out, Mat::Ones(1, 1));
  }

  void backward(Var out, const Mat& seed) {
    if (seed.rows() != value(out).rows() || seed.cols() != value(out).cols())
      throw ShapeError("backward seed shape mismatch");
    accumulate(out, seed);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0 || !n.back) continue;
      n.back(*this, n.grad, n.value);
      n.grad = Mat();  // interior gradients are dead once pushed to inputs
    }
  }

  void accumulate_into(ParamStore& store) const {
    for (const Node& n : nodes_) {
      if (n.param < 0 || n.grad.size() == 0) continue;
      store[static_cast<std::size_t>(n.param)].grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward back;
    bool requires_grad = false;
    int param = -1;
  };

  Var push(Mat v, bool req, Backward back) {
    nodes_.push_back(Node{std::move(v), Mat{}, std::move(back), req, -1});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(*this); }

namespace ad {

inline void require_same(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Var matmul(Var a, Var b) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: " + shape_str(A) + " x " + shape_str(B));
  Mat out(A.rows(), B.cols());
  out.noalias() = A * B;
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a)) {
      Mat ga(g.rows(), b.value().rows());
      ga.noalias() = g * b.value().transpose();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Mat gb(a.value().cols(), g.cols());
      gb.noalias() = a.value().transpose() * g;
      t.accumulate(b, gb);
    }
  });
}

inline Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Mat out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, g.cwiseProduct(b.value()));
    t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double c) {
  return a.tape->record(a.value() * c, {a}, [a, c](Tape& t, const Mat& g, const Mat&) { t.accumulate(a, g * c); });
}

inline Var add_scalar(Var a, double c) {
  Mat out = a.value().array() + c;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) { t.accumulate(a, g); });
}

/// a[r, :] + bias[0, :] for every row r.
inline Var add_rowvec(Var a, Var bias) {
  const Mat& A = a.value();
  const Mat& b = bias.value();
  if (b.rows() != 1 || b.cols() != A.cols())
    throw ShapeError("add_rowvec: " + shape_str(A) + " + " + shape_str(b));
  Mat out = A.rowwise() + b.row(0);
  return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

/// a[r, c] * gain[0, c].
inline Var mul_rowvec(Var a, Var gain) {
  const Mat& A = a.value();
  const Mat& w = gain.value();
  if (w.rows() != 1 || w.cols() != A.cols())
    throw ShapeError("mul_rowvec: " + shape_str(A) + " * " + shape_str(w));
  Mat out = A.array().rowwise() * w.row(0).array();
  return a.tape->record(std::move(out), {a, gain}, [a, gain](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a)) {
      Mat ga = g.array().rowwise() * gain.value().row(0).array();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(a.value()).colwise().sum());
  });
}

/// a[r, c] * s[r, 0].
inline Var mul_colvec(Var a, Var s) {
  const Mat& A = a.value();
  const Mat& v = s.value();
  if (v.cols() != 1 || v.rows() != A.rows())
    throw ShapeError("mul_colvec: " + shape_str(A) + " * " + shape_str(v));
  Mat out = A.array().colwise() * v.col(0).array();
  return a.tape->record(std::move(out), {a, s}, [a, s](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a)) {
      Mat ga = g.array().colwise() * s.value().col(0).array();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(s)) t.accumulate(s, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

inline Var sigmoid(Var a) {
  Mat out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat& y) {
    t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var tanh(Var a) {
  // exp form: vectorizes, unlike Eigen's tanh for double
  Mat out = (1.0 - 2.0 / ((2.0 * a.value().array()).exp() + 1.0)).matrix();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat& y) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

inline Var relu(Var a) {
  Mat out = a.value().cwiseMax(0.0);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat ga = (a.value().array() > 0.0).select(g, 0.0);
    t.accumulate(a, ga);
  });
}

/// |a| with subgradient 0 at a == 0.
inline Var abs(Var a) {
  Mat out = a.value().cwiseAbs();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat sgn = a.value().unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    t.accumulate(a, g.cwiseProduct(sgn));
  });
}

inline Var pow_scalar(Var a, double p) {
  Mat out = a.value().array().pow(p).matrix();
  return a.tape->record(std::move(out), {a}, [a, p](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, (g.array() * p * a.value().array().pow(p - 1.0)).matrix());
  });
}

inline Var transpose(Var a) {
  Mat out = a.value().transpose();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) { t.accumulate(a, g.transpose()); });
}

inline Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, Mat::Constant(a.value().rows(), a.value().cols(), g(0, 0)));
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  Mat out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape->record(std::move(out), {a}, [a, n](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, Mat::Constant(a.value().rows(), a.value().cols(), g(0, 0) / n));
  });
}

/// Row sums as a column [rows x 1].
inline Var row_sum(Var a) {
  Mat out = a.value().rowwise().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat ga = g.col(0).replicate(1, a.value().cols());
    t.accumulate(a, ga);
  });
}

/// Softmax along each row. Entries equal to -inf get probability 0; an
/// all -inf row maps to zeros.
inline Var softmax_rows(Var a) {
  const Mat& A = a.value();
  Mat out(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double m = A.row(r).maxCoeff();
    if (m == -std::numeric_limits<double>::infinity()) {
      out.row(r).setZero();
      continue;
    }
    out.row(r) = (A.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat& y) {
    Mat dot = g.cwiseProduct(y).rowwise().sum();
    Mat ga = y.array() * (g.colwise() - dot.col(0)).array();
    t.accumulate(a, ga);
  });
}

/// Divides each row by its sum; all-zero rows stay zero.
inline Var row_normalize(Var a) {
  const Mat& A = a.value();
  Vec s = A.rowwise().sum();
  Mat out = A;
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    if (s(r) != 0.0) out.row(r) /= s(r);
  return a.tape->record(std::move(out), {a}, [a, s](Tape& t, const Mat& g, const Mat& out) {
    Mat ga(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (s(r) == 0.0) {
        ga.row(r).setZero();
        continue;
      }
      const double d = g.row(r).dot(out.row(r));
      ga.row(r) = (g.row(r).array() - d) / s(r);
    }
    t.accumulate(a, ga);
  });
}

/// Per-row standardization (x - mean) / sqrt(var + eps), population variance.
inline Var layer_norm_rows(Var a, double eps) {
  const Mat& A = a.value();
  Vec mu = A.rowwise().mean();
  Mat xc = A.colwise() - mu;
  Vec var = xc.array().square().rowwise().mean();
  Vec inv = (var.array() + eps).rsqrt();
  Mat out = xc.array().colwise() * inv.array();
  return a.tape->record(std::move(out), {a}, [a, inv](Tape& t, const Mat& g, const Mat& out) {
    // dx = inv * (g - mean(g) - y * mean(g * y))
    Vec gm = g.rowwise().mean();
    Vec gym = g.cwiseProduct(out).rowwise().mean();
    Mat ga = g.colwise() - gm;
    ga -= (out.array().colwise() * gym.array()).matrix();
    ga = ga.array().colwise() * inv.array();
    t.accumulate(a, ga);
  });
}

inline Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Mat& A = a.value();
  if (rows * cols != A.size()) throw ShapeError("reshape: element count mismatch");
  Mat out = Eigen::Map<const Mat>(A.data(), rows, cols);
  const Eigen::Index r0 = A.rows(), c0 = A.cols();
  return a.tape->record(std::move(out), {a}, [a, r0, c0](Tape& t, const Mat& g, const Mat&) {
    t.accumulate(a, Eigen::Map<const Mat>(g.data(), r0, c0));
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  const Mat& A = a.value();
  if (start < 0 || start + count > A.rows()) throw ShapeError("slice_rows: out of range");
  Mat out = A.middleRows(start, count);
  return a.tape->record(std::move(out), {a}, [a, start, count](Tape& t, const Mat& g, const Mat&) {
    Mat ga = Mat::Zero(a.value().rows(), a.value().cols());
    ga.middleRows(start, count) = g;
    t.accumulate(a, ga);
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const Mat& A = a.value();
  if (start < 0 || start + count > A.cols()) throw ShapeError("slice_cols: out of range");
  Mat out = A.middleCols(start, count);
  return a.tape->record(std::move(out), {a}, [a, start, count](Tape& t, const Mat& g, const Mat&) {
    Mat ga = Mat::Zero(a.value().rows(), a.value().cols());
    ga.middleCols(start, count) = g;
    t.accumulate(a, ga);
  });
}

/// Gathers columns by index; repeated indices accumulate in the backward pass.
inline Var select_cols(Var a, std::vector<Eigen::Index> idx) {
  const Mat& A = a.value();
  Mat out(A.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= A.cols()) throw ShapeError("select_cols: index out of range");
    out.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
  }
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Mat& g, const Mat&) {
    Mat ga = Mat::Zero(a.value().rows(), a.value().cols());
    for (std::size_t k = 0; k < idx.size(); ++k) ga.col(idx[k]) += g.col(static_cast<Eigen::Index>(k));
    t.accumulate(a, ga);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().value().cols();
  for (const Var& p : parts) {
    if (p.value().cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.value().rows()) = p.value();
    r += p.value().rows();
  }
  return parts.front().tape->record(std::move(out), parts, [parts](Tape& t, const Mat& g, const Mat&) {
    Eigen::Index r0 = 0;
    for (const Var& p : parts) {
      const Eigen::Index n = p.value().rows();
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(r0, n));
      r0 += n;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().value().rows();
  for (const Var& p : parts) {
    if (p.value().rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.value().cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.value().cols()) = p.value();
    c += p.value().cols();
  }
  return parts.front().tape->record(std::move(out), parts, [parts](Tape& t, const Mat& g, const Mat&) {
    Eigen::Index c0 = 0;
    for (const Var& p : parts) {
      const Eigen::Index n = p.value().cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(c0, n));
      c0 += n;
    }
  });
}

/// Mean over each group of `n` consecutive rows: [blocks * n x d] -> [blocks x d].
inline Var block_row_mean(Var a, Eigen::Index blocks) {
  const Mat& A = a.value();
  if (blocks <= 0 || A.rows() % blocks != 0) throw ShapeError("block_row_mean: rows not divisible by blocks");
  const Eigen::Index n = A.rows() / blocks;
  Mat out(blocks, A.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out.row(b) = A.middleRows(b * n, n).colwise().sum() / static_cast<double>(n);
  return a.tape->record(std::move(out), {a}, [a, blocks, n](Tape& t, const Mat& g, const Mat&) {
    Mat ga(a.value().rows(), a.value().cols());
    for (Eigen::Index b = 0; b < blocks; ++b)
      ga.middleRows(b * n, n) = g.row(b).replicate(n, 1) / static_cast<double>(n);
    t.accumulate(a, ga);
  });
}

/// Stacks `reps` copies of `a` vertically.
inline Var tile_rows(Var a, Eigen::Index reps) {
  const Mat& A = a.value();
  Mat out = A.replicate(reps, 1);
  return a.tape->record(std::move(out), {a}, [a, reps](Tape& t, const Mat& g, const Mat&) {
    const Eigen::Index n = a.value().rows();
    Mat ga = Mat::Zero(n, a.value().cols());
    for (Eigen::Index k = 0; k < reps; ++k) ga += g.middleRows(k * n, n);
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------
// Block-batched ops. A "blocked" matrix stacks `blocks` groups of `n` rows, one
// group per batch element: row b * n + i holds node i of batch element b.
// ---------------------------------------------------------------------------

/// out_b = P * H_b for every block b.
inline Var block_left_matmul(Var p, Var h, Eigen::Index blocks) {
  const Mat& P = p.value();
  const Mat& H = h.value();
  const Eigen::Index n = P.rows();
  if (P.cols() != n || H.rows() != n * blocks)
    throw ShapeError("block_left_matmul: " + shape_str(P) + " x " + shape_str(H));
  const Eigen::Index d = H.cols();
  Mat out(H.rows(), d);
  for (Eigen::Index b = 0; b < blocks; ++b) out.middleRows(b * n, n).noalias() = P * H.middleRows(b * n, n);
  return p.tape->record(std::move(out), {p, h}, [p, h, blocks, n, d](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(h)) {
      Mat gh(g.rows(), d);
      const Mat pt = p.value().transpose();
      for (Eigen::Index b = 0; b < blocks; ++b) gh.middleRows(b * n, n).noalias() = pt * g.middleRows(b * n, n);
      t.accumulate(h, gh);
    }
    if (t.requires_grad(p)) {
      Mat gp = Mat::Zero(n, n);
      for (Eigen::Index b = 0; b < blocks; ++b)
        gp.noalias() += g.middleRows(b * n, n) * h.value().middleRows(b * n, n).transpose();
      t.accumulate(p, gp);
    }
  });
}

/// out_b = Q_b * K_b^T, producing [blocks * n x n].
inline Var block_matmul_abt(Var q, Var k, Eigen::Index blocks) {
  const Mat& Q = q.value();
  const Mat& K = k.value();
  require_same(Q, K, "block_matmul_abt");
  const Eigen::Index n = Q.rows() / blocks;
  if (n * blocks != Q.rows()) throw ShapeError("block_matmul_abt: rows not divisible by blocks");
  Mat out(Q.rows(), n);
  for (Eigen::Index b = 0; b < blocks; ++b)
    out.middleRows(b * n, n).noalias() = Q.middleRows(b * n, n) * K.middleRows(b * n, n).transpose();
  return q.tape->record(std::move(out), {q, k}, [q, k, blocks, n](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(q)) {
      Mat gq(q.value().rows(), q.value().cols());
      for (Eigen::Index b = 0; b < blocks; ++b)
        gq.middleRows(b * n, n).noalias() = g.middleRows(b * n, n) * k.value().middleRows(b * n, n);
      t.accumulate(q, gq);
    }
    if (t.requires_grad(k)) {
      Mat gk(k.value().rows(), k.value().cols());
      for (Eigen::Index b = 0; b < blocks; ++b)
        gk.middleRows(b * n, n).noalias() = g.middleRows(b * n, n).transpose() * q.value().middleRows(b * n, n);
      t.accumulate(k, gk);
    }
  });
}

/// out_b = A_b * V_b where A is [blocks * n x n] and V is [blocks * n x d].
inline Var block_matmul(Var a, Var v, Eigen::Index blocks) {
  const Mat& A = a.value();
  const Mat& V = v.value();
  const Eigen::Index n = A.cols();
  if (A.rows() != n * blocks || V.rows() != n * blocks)
    throw ShapeError("block_matmul: " + shape_str(A) + " x " + shape_str(V));
  Mat out(V.rows(), V.cols());
  for (Eigen::Index b = 0; b < blocks; ++b)
    out.middleRows(b * n, n).noalias() = A.middleRows(b * n, n) * V.middleRows(b * n, n);
  return a.tape->record(std::move(out), {a, v}, [a, v, blocks, n](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a)) {
      Mat ga(a.value().rows(), n);
      for (Eigen::Index b = 0; b < blocks; ++b)
        ga.middleRows(b * n, n).noalias() = g.middleRows(b * n, n) * v.value().middleRows(b * n, n).transpose();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(v)) {
      Mat gv(v.value().rows(), v.value().cols());
      for (Eigen::Index b = 0; b < blocks; ++b)
        gv.middleRows(b * n, n).noalias() = a.value().middleRows(b * n, n).transpose() * g.middleRows(b * n, n);
      t.accumulate(v, gv);
    }
  });
}

/// Interleaves blocked inputs: output block b is [part0_b; part1_b; ...].
inline Var concat_blocks(const std::vector<Var>& parts, Eigen::Index blocks) {
  if (parts.empty()) throw ShapeError("concat_blocks: no inputs");
  const Eigen::Index d = parts.front().value().cols();
  std::vector<Eigen::Index> sizes;
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != d || p.value().rows() % blocks != 0) throw ShapeError("concat_blocks: bad part shape");
    sizes.push_back(p.value().rows() / blocks);
    total += sizes.back();
  }
  Mat out(total * blocks, d);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    Eigen::Index off = b * total;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      out.middleRows(off, sizes[k]) = parts[k].value().middleRows(b * sizes[k], sizes[k]);
      off += sizes[k];
    }
  }
  return parts.front().tape->record(std::move(out), parts, [parts, sizes, total, blocks](Tape& t, const Mat& g, const Mat&) {
    Eigen::Index start = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.requires_grad(parts[k])) {
        Mat gk(sizes[k] * blocks, g.cols());
        for (Eigen::Index b = 0; b < blocks; ++b)
          gk.middleRows(b * sizes[k], sizes[k]) = g.middleRows(b * total + start, sizes[k]);
        t.accumulate(parts[k], gk);
      }
      start += sizes[k];
    }
  });
}

/// Forward value `hard`; gradient passes straight through to `soft`. With an
/// `anchor`, the forward value is hard + (soft - anchor), which is the
/// differentiable surrogate the estimator follows (used for verification).
inline Var straight_through(const Mat& hard, Var soft, const Mat* anchor = nullptr) {
  require_same(hard, soft.value(), "straight_through");
  Mat out = hard;
  if (anchor != nullptr) out += soft.value() - *anchor;
  return soft.tape->record(std::move(out), {soft}, [soft](Tape& t, const Mat& g, const Mat&) { t.accumulate(soft, g); });
}

}  // namespace ad
}  // namespace hstgnn
