#pragma once

// Reverse-mode differentiation over row-major double matrices.
//
// A Graph is a tape: every op appends a node holding its forward value and,
// when any input requires a gradient, a closure that pushes the node's
// gradient back into its inputs. Graph::backward() sweeps the tape once in
// reverse. Parameters live in a ParamStore; a parameter leaf accumulates
// into Parameter::grad when the sweep reaches it.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iatt/errors.hpp"

namespace iatt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row offsets of variable-length groups inside a stacked matrix: group b
// occupies rows [offsets[b], offsets[b+1]). Groups may be empty.
using Segments = std::shared_ptr<const std::vector<int>>;

inline Segments make_segments(std::vector<int> offsets) {
  require(!offsets.empty() && offsets.front() == 0, "segments: offsets must start at 0");
  for (size_t i = 1; i < offsets.size(); ++i) {
    require(offsets[i] >= offsets[i - 1], "segments: offsets must be non-decreasing");
  }
  return std::make_shared<const std::vector<int>>(std::move(offsets));
}

inline int segment_count(const Segments& s) { return static_cast<int>(s->size()) - 1; }

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
  bool trainable = true;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix value, bool trainable = true) {
    require(!index_.count(name), "ParamStore: duplicate parameter '" + name + "'");
    Parameter p;
    p.name = name;
    p.grad = Matrix::Zero(value.rows(), value.cols());
    p.m = Matrix::Zero(value.rows(), value.cols());
    p.v = Matrix::Zero(value.rows(), value.cols());
    p.value = std::move(value);
    p.trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
    return params_[it->second];
  }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  size_t size() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
    return n;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_) {
      if (p.trainable) s += p.grad.squaredNorm();
    }
    return std::sqrt(s);
  }

  // Rescales trainable gradients so their global L2 norm is at most max_norm.
  double clip_grad_norm(double max_norm) {
    double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
      double scale = max_norm / norm;
      for (auto& p : params_) {
        if (p.trainable) p.grad *= scale;
      }
    }
    return norm;
  }

  void set_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
  }

  // Copies every parameter from `other` under a name prefix, e.g. embedding
  // an IW store inside a policy store as "iw.*".
  void absorb(const ParamStore& other, const std::string& prefix, bool trainable) {
    for (const auto& p : other.params()) add(prefix + p.name, p.value, trainable);
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
  long step_ = 0;
};

// Bias-corrected Adam over the trainable parameters of a store.
inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : store.params()) {
    if (!p.trainable) continue;
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Initialization

// Orthogonal init (QR of a Gaussian matrix) scaled by gain.
inline Matrix orthogonal_init(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Matrix a(big, small);
  for (int i = 0; i < big; ++i) {
    for (int j = 0; j < small; ++j) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  Matrix r = qr.matrixQR().topLeftCorner(small, small);
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Matrix out = rows >= cols ? q : Matrix(q.transpose());
  return gain * out;
}

// ---------------------------------------------------------------------------
// Tape

class Graph;

struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& grad_out, const Matrix& out)>;

  // record=false builds values only (inference path).
  explicit Graph(bool record = true) : record_(record) { nodes_.reserve(64); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  Var param(Parameter& p) {
    const bool rg = record_ && p.trainable;
    Parameter* pp = &p;
    return push(p.value, rg, rg ? Backward([pp](Graph&, const Matrix& g, const Matrix&) { pp->grad += g; }) : nullptr);
  }

  Var param(ParamStore& store, const std::string& name) { return param(store.at(name)); }

  // Read-only parameters enter as constants; only valid off the tape.
  Var param(const Parameter& p) {
    require(!record_, "Graph: const parameter on a recording graph");
    return push(p.value, false, nullptr);
  }
  Var param(const ParamStore& store, const std::string& name) { return param(store.at(name)); }

  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

  // Gradient of the last backward() w.r.t. a node (zero if never reached).
  Matrix grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Generic node constructor used by the ops below.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward fn) {
    bool rg = false;
    if (record_) {
      for (const Var& p : parents) rg = rg || requires_grad(p);
    }
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }
  Var record(Matrix value, const std::vector<Var>& parents, Backward fn) {
    bool rg = false;
    if (record_) {
      for (const Var& p : parents) rg = rg || requires_grad(p);
    }
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(Var loss) {
    require(loss.g == this, "backward: loss belongs to another graph");
    const Matrix& lv = value(loss);
    require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be a scalar");
    require(record_, "backward: graph was built without recording");
    Node& root = nodes_[static_cast<size_t>(loss.id)];
    if (!root.requires_grad) return;
    root.grad = Matrix::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad, n.value);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool requires_grad, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops. All take and return Vars on the same graph.

namespace ops {

inline void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), std::string(op) + ": shape mismatch");
}

inline Var matmul(Var a, Var b) {
  Graph& g = *a.g;
  const Matrix& av = g.value(a);
  const Matrix& bv = g.value(b);
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ");
  Matrix out = av * bv;
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go, const Matrix&) {
    if (g.requires_grad(a)) g.accumulate(a, go * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * go);
  });
}

// a [n x m] + row [1 x m] broadcast over rows.
inline Var add_row(Var a, Var row) {
  Graph& g = *a.g;
  const Matrix& av = g.value(a);
  const Matrix& rv = g.value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row: bias shape mismatch");
  Matrix out = av.rowwise() + rv.row(0);
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& go, const Matrix&) {
    g.accumulate(a, go);
    if (g.requires_grad(row)) g.accumulate(row, go.colwise().sum());
  });
}

// a [n x m] * row [1 x m] broadcast over rows.
inline Var mul_row(Var a, Var row) {
  Graph& g = *a.g;
  const Matrix& av = g.value(a);
  const Matrix& rv = g.value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(), "mul_row: shape mismatch");
  Matrix out = av.array().rowwise() * rv.row(0).array();
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& rv = g.value(row);
    if (g.requires_grad(a)) g.accumulate(a, Matrix(go.array().rowwise() * rv.row(0).array()));
    if (g.requires_grad(row)) {
      g.accumulate(row, Matrix(go.cwiseProduct(g.value(a)).colwise().sum()));
    }
  });
}

inline Var add(Var a, Var b) {
  Graph& g = *a.g;
  same_shape(g.value(a), g.value(b), "add");
  Matrix out = g.value(a) + g.value(b);
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go, const Matrix&) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = *a.g;
  same_shape(g.value(a), g.value(b), "sub");
  Matrix out = g.value(a) - g.value(b);
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go, const Matrix&) {
    g.accumulate(a, go);
    if (g.requires_grad(b)) g.accumulate(b, -go);
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = *a.g;
  same_shape(g.value(a), g.value(b), "mul");
  Matrix out = g.value(a).cwiseProduct(g.value(b));
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go, const Matrix&) {
    if (g.requires_grad(a)) g.accumulate(a, go.cwiseProduct(g.value(b)));
    if (g.requires_grad(b)) g.accumulate(b, go.cwiseProduct(g.value(a)));
  });
}

inline Var scale(Var a, double c) {
  Graph& g = *a.g;
  Matrix out = c * g.value(a);
  return g.record(std::move(out), {a}, [a, c](Graph& g, const Matrix& go, const Matrix&) { g.accumulate(a, c * go); });
}

inline Var add_scalar(Var a, double c) {
  Graph& g = *a.g;
  Matrix out = g.value(a).array() + c;
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix&) { g.accumulate(a, go); });
}

inline Var tanh(Var a) {
  Graph& g = *a.g;
  Matrix out = g.value(a).array().tanh();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix& y) {
    g.accumulate(a, Matrix(go.array() * (1.0 - y.array().square())));
  });
}

inline Var relu(Var a) {
  Graph& g = *a.g;
  Matrix out = g.value(a).cwiseMax(0.0);
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& x = g.value(a);
    g.accumulate(a, Matrix((x.array() > 0.0).select(go, 0.0)));
  });
}

inline Var exp(Var a) {
  Graph& g = *a.g;
  Matrix out = g.value(a).array().exp();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix&) {
    g.accumulate(a, Matrix(go.array() * g.value(a).array().exp()));
  });
}

inline Var square(Var a) {
  Graph& g = *a.g;
  Matrix out = g.value(a).array().square();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix&) {
    g.accumulate(a, Matrix(2.0 * go.array() * g.value(a).array()));
  });
}

// Elementwise clamp; gradient passes only strictly inside (lo, hi).
inline Var clip(Var a, double lo, double hi) {
  Graph& g = *a.g;
  Matrix out = g.value(a).cwiseMax(lo).cwiseMin(hi);
  return g.record(std::move(out), {a}, [a, lo, hi](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& x = g.value(a);
    g.accumulate(a, Matrix((x.array() > lo && x.array() < hi).select(go, 0.0)));
  });
}

// Elementwise minimum; ties route the gradient to `a`.
inline Var minimum(Var a, Var b) {
  Graph& g = *a.g;
  same_shape(g.value(a), g.value(b), "minimum");
  Matrix out = g.value(a).cwiseMin(g.value(b));
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& av = g.value(a);
    const Matrix& bv = g.value(b);
    auto pick_a = (av.array() <= bv.array());
    if (g.requires_grad(a)) g.accumulate(a, Matrix(pick_a.select(go, 0.0)));
    if (g.requires_grad(b)) g.accumulate(b, Matrix(pick_a.select(Matrix::Zero(go.rows(), go.cols()), go)));
  });
}

// [n x m] -> [n x 1]
inline Var sum_cols(Var a) {
  Graph& g = *a.g;
  Matrix out = g.value(a).rowwise().sum();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& av = g.value(a);
    g.accumulate(a, Matrix(go.replicate(1, av.cols())));
  });
}

inline Var sum(Var a) {
  Graph& g = *a.g;
  Matrix out(1, 1);
  out(0, 0) = g.value(a).sum();
  return g.record(std::move(out), {a}, [a](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& av = g.value(a);
    g.accumulate(a, Matrix::Constant(av.rows(), av.cols(), go(0, 0)));
  });
}

inline Var mean(Var a) {
  Graph& g = *a.g;
  const double n = static_cast<double>(g.value(a).size());
  require(n > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Graph& g = *parts.front().g;
  const Eigen::Index rows = g.value(parts.front()).rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(g.value(p).rows() == rows, "concat_cols: row counts differ");
    cols += g.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  bool rg = false;
  for (const Var& p : parts) {
    out.middleCols(c, g.value(p).cols()) = g.value(p);
    c += g.value(p).cols();
    rg = rg || g.requires_grad(p);
  }
  if (!g.recording() || !rg) return g.constant(std::move(out));
  return g.record(std::move(out), parts, [ps = parts](Graph& g, const Matrix& go, const Matrix&) {
    Eigen::Index c = 0;
    for (const Var& p : ps) {
      const Eigen::Index w = g.value(p).cols();
      if (g.requires_grad(p)) g.accumulate(p, go.middleCols(c, w));
      c += w;
    }
  });
}

// Rows [begin, begin+count) of a.
inline Var slice_rows(Var a, int begin, int count) {
  Graph& g = *a.g;
  const Matrix& av = g.value(a);
  require(begin >= 0 && count >= 0 && begin + count <= av.rows(), "slice_rows: out of range");
  Matrix out = av.middleRows(begin, count);
  return g.record(std::move(out), {a}, [a, begin, count](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& av = g.value(a);
    Matrix full = Matrix::Zero(av.rows(), av.cols());
    full.middleRows(begin, count) = go;
    g.accumulate(a, full);
  });
}

// --- segment ops -----------------------------------------------------------

// out[r] = <q[b], k[r]> * scale for every row r of group b.
inline Var segment_dot(Var q, Var k, const Segments& seg, double scale_by) {
  Graph& g = *q.g;
  const Matrix& qv = g.value(q);
  const Matrix& kv = g.value(k);
  const int groups = segment_count(seg);
  require(qv.rows() == groups, "segment_dot: one query row per group required");
  require(qv.cols() == kv.cols(), "segment_dot: query/key dims differ");
  require((*seg)[static_cast<size_t>(groups)] == kv.rows(), "segment_dot: key rows do not match segments");
  Matrix out(kv.rows(), 1);
  for (int b = 0; b < groups; ++b) {
    for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) out(r, 0) = scale_by * qv.row(b).dot(kv.row(r));
  }
  return g.record(std::move(out), {q, k}, [q, k, seg, scale_by](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& qv = g.value(q);
    const Matrix& kv = g.value(k);
    const int groups = segment_count(seg);
    if (g.requires_grad(q)) {
      Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
      for (int b = 0; b < groups; ++b) {
        for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) gq.row(b) += scale_by * go(r, 0) * kv.row(r);
      }
      g.accumulate(q, gq);
    }
    if (g.requires_grad(k)) {
      Matrix gk(kv.rows(), kv.cols());
      for (int b = 0; b < groups; ++b) {
        for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) gk.row(r) = scale_by * go(r, 0) * qv.row(b);
      }
      g.accumulate(k, gk);
    }
  });
}

// Softmax within each group of a column vector.
inline Var segment_softmax(Var s, const Segments& seg) {
  Graph& g = *s.g;
  const Matrix& sv = g.value(s);
  require(sv.cols() == 1, "segment_softmax: expects a column vector");
  const int groups = segment_count(seg);
  require((*seg)[static_cast<size_t>(groups)] == sv.rows(), "segment_softmax: rows do not match segments");
  Matrix out(sv.rows(), 1);
  for (int b = 0; b < groups; ++b) {
    const int lo = (*seg)[b], hi = (*seg)[b + 1];
    if (lo == hi) continue;
    double mx = sv(lo, 0);
    for (int r = lo + 1; r < hi; ++r) mx = std::max(mx, sv(r, 0));
    double z = 0.0;
    for (int r = lo; r < hi; ++r) {
      out(r, 0) = std::exp(sv(r, 0) - mx);
      z += out(r, 0);
    }
    for (int r = lo; r < hi; ++r) out(r, 0) /= z;
  }
  return g.record(std::move(out), {s}, [s, seg](Graph& g, const Matrix& go, const Matrix& p) {
    Matrix gs(p.rows(), 1);
    const int groups = segment_count(seg);
    for (int b = 0; b < groups; ++b) {
      const int lo = (*seg)[b], hi = (*seg)[b + 1];
      double dot = 0.0;
      for (int r = lo; r < hi; ++r) dot += go(r, 0) * p(r, 0);
      for (int r = lo; r < hi; ++r) gs(r, 0) = p(r, 0) * (go(r, 0) - dot);
    }
    g.accumulate(s, gs);
  });
}

// out[b] = sum_{r in group b} w[r] * v[r]; empty groups give zero rows.
inline Var segment_weighted_sum(Var w, Var v, const Segments& seg) {
  Graph& g = *w.g;
  const Matrix& wv = g.value(w);
  const Matrix& vv = g.value(v);
  const int groups = segment_count(seg);
  require(wv.cols() == 1 && wv.rows() == vv.rows(), "segment_weighted_sum: shape mismatch");
  require((*seg)[static_cast<size_t>(groups)] == vv.rows(), "segment_weighted_sum: rows do not match segments");
  Matrix out = Matrix::Zero(groups, vv.cols());
  for (int b = 0; b < groups; ++b) {
    for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) out.row(b) += wv(r, 0) * vv.row(r);
  }
  return g.record(std::move(out), {w, v}, [w, v, seg](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& wv = g.value(w);
    const Matrix& vv = g.value(v);
    const int groups = segment_count(seg);
    if (g.requires_grad(w)) {
      Matrix gw(wv.rows(), 1);
      for (int b = 0; b < groups; ++b) {
        for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) gw(r, 0) = go.row(b).dot(vv.row(r));
      }
      g.accumulate(w, gw);
    }
    if (g.requires_grad(v)) {
      Matrix gv(vv.rows(), vv.cols());
      for (int b = 0; b < groups; ++b) {
        for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) gv.row(r) = wv(r, 0) * go.row(b);
      }
      g.accumulate(v, gv);
    }
  });
}

// Scatters a grouped column vector into a dense [groups x width] matrix:
// out(b, slot[r]) = x[r]. Slots within a group must be distinct.
inline Var scatter_slots(Var x, const Segments& seg, std::shared_ptr<const std::vector<int>> slots, int width) {
  Graph& g = *x.g;
  const Matrix& xv = g.value(x);
  const int groups = segment_count(seg);
  require(xv.cols() == 1 && static_cast<size_t>(xv.rows()) == slots->size(), "scatter_slots: shape mismatch");
  Matrix out = Matrix::Zero(groups, width);
  for (int b = 0; b < groups; ++b) {
    for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) {
      const int s = (*slots)[static_cast<size_t>(r)];
      require(s >= 0 && s < width, "scatter_slots: slot out of range");
      out(b, s) = xv(r, 0);
    }
  }
  return g.record(std::move(out), {x}, [x, seg, slots](Graph& g, const Matrix& go, const Matrix&) {
    const int groups = segment_count(seg);
    Matrix gx(static_cast<Eigen::Index>(slots->size()), 1);
    for (int b = 0; b < groups; ++b) {
      for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) gx(r, 0) = go(b, (*slots)[static_cast<size_t>(r)]);
    }
    g.accumulate(x, gx);
  });
}

// Inverse of scatter_slots: out[r] = m(b, slot[r]).
inline Var gather_slots(Var m, const Segments& seg, std::shared_ptr<const std::vector<int>> slots) {
  Graph& g = *m.g;
  const Matrix& mv = g.value(m);
  const int groups = segment_count(seg);
  require(mv.rows() == groups, "gather_slots: one row per group required");
  Matrix out(static_cast<Eigen::Index>(slots->size()), 1);
  for (int b = 0; b < groups; ++b) {
    for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) {
      const int s = (*slots)[static_cast<size_t>(r)];
      require(s >= 0 && s < mv.cols(), "gather_slots: slot out of range");
      out(r, 0) = mv(b, s);
    }
  }
  return g.record(std::move(out), {m}, [m, seg, slots](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& mv = g.value(m);
    const int groups = segment_count(seg);
    Matrix gm = Matrix::Zero(mv.rows(), mv.cols());
    for (int b = 0; b < groups; ++b) {
      for (int r = (*seg)[b]; r < (*seg)[b + 1]; ++r) gm(b, (*slots)[static_cast<size_t>(r)]) += go(r, 0);
    }
    g.accumulate(m, gm);
  });
}

// Divides each group by its sum; an all-zero group becomes uniform.
inline Var segment_normalize(Var x, const Segments& seg) {
  Graph& g = *x.g;
  const Matrix& xv = g.value(x);
  const int groups = segment_count(seg);
  require(xv.cols() == 1, "segment_normalize: expects a column vector");
  Matrix out(xv.rows(), 1);
  std::vector<double> sums(static_cast<size_t>(groups), 0.0);
  for (int b = 0; b < groups; ++b) {
    const int lo = (*seg)[b], hi = (*seg)[b + 1];
    double z = 0.0;
    for (int r = lo; r < hi; ++r) z += xv(r, 0);
    sums[static_cast<size_t>(b)] = z;
    for (int r = lo; r < hi; ++r) out(r, 0) = z > 0.0 ? xv(r, 0) / z : 1.0 / (hi - lo);
  }
  return g.record(std::move(out), {x}, [x, seg, sums](Graph& g, const Matrix& go, const Matrix&) {
    const Matrix& xv = g.value(x);
    Matrix gx = Matrix::Zero(xv.rows(), 1);
    const int groups = segment_count(seg);
    for (int b = 0; b < groups; ++b) {
      const int lo = (*seg)[b], hi = (*seg)[b + 1];
      const double z = sums[static_cast<size_t>(b)];
      if (!(z > 0.0)) continue;
      double dot = 0.0;
      for (int r = lo; r < hi; ++r) dot += go(r, 0) * xv(r, 0);
      for (int r = lo; r < hi; ++r) gx(r, 0) = go(r, 0) / z - dot / (z * z);
    }
    g.accumulate(x, gx);
  });
}

}  // namespace ops

// Softmax of a single column vector.
inline Var softmax(Var v) {
  const Matrix& x = v.g->value(v);
  require(x.cols() == 1 && x.rows() > 0, "softmax: expects a nonempty column vector");
  return ops::segment_softmax(v, make_segments({0, static_cast<int>(x.rows())}));
}

// Scaled dot-product attention weights of one query [1 x d] over keys [k x d].
inline Var attention(Var query, Var keys) {
  const Matrix& k = keys.g->value(keys);
  require(k.rows() > 0, "attention: empty key set");
  require(query.g->value(query).rows() == 1, "attention: single query row expected");
  auto seg = make_segments({0, static_cast<int>(k.rows())});
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  return ops::segment_softmax(ops::segment_dot(query, keys, seg, scale), seg);
}

// ---------------------------------------------------------------------------
// Layers

enum class Activation { linear, tanh, relu };

inline Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::tanh:
      return ops::tanh(x);
    case Activation::relu:
      return ops::relu(x);
    case Activation::linear:
      break;
  }
  return x;
}

// Registers "<name>.w" [in x out] and "<name>.b" [1 x out].
inline void add_dense(ParamStore& store, const std::string& name, int in, int out, double gain,
                      std::mt19937_64& rng, bool bias = true) {
  store.add(name + ".w", orthogonal_init(in, out, gain, rng));
  if (bias) store.add(name + ".b", Matrix::Zero(1, out));
}

template <typename Store>
inline Var dense(Graph& g, Store& store, const std::string& name, Var x) {
  Var y = ops::matmul(x, g.param(store, name + ".w"));
  if (store.contains(name + ".b")) y = ops::add_row(y, g.param(store, name + ".b"));
  return y;
}

// Two-layer MLP: out = W2 act(W1 x + b1) + b2, with optional output activation.
inline void add_mlp2(ParamStore& store, const std::string& name, int in, int hidden, int out, double hidden_gain,
                     double out_gain, std::mt19937_64& rng) {
  add_dense(store, name + ".0", in, hidden, hidden_gain, rng);
  add_dense(store, name + ".1", hidden, out, out_gain, rng);
}

template <typename Store>
inline Var mlp2(Graph& g, Store& store, const std::string& name, Var x, Activation act,
                Activation out_act = Activation::linear) {
  Var h = activate(dense(g, store, name + ".0", x), act);
  return activate(dense(g, store, name + ".1", h), out_act);
}

// Recommended orthogonal gain for tanh layers.
inline constexpr double kTanhGain = 5.0 / 3.0;

}  // namespace iatt
