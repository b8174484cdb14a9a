#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records one forward computation (typically one training sample).
// Every operation stores its result and a closure that pushes the output
// gradient back to its inputs. Leaves are constants, external references,
// or parameters; parameter gradients are read back through their slot index
// after `backward`.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "stts/error.hpp"

namespace stts::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var constant(Matrix value) { return push(std::move(value), nullptr, false, -1, {}); }

  // Leaf that aliases `value`; the referenced matrix must outlive the tape.
  Var reference(const Matrix& value) { return push(Matrix(), &value, false, -1, {}); }

  // Aliasing leaf whose gradient is reported under `slot`.
  Var parameter(const Matrix& value, int slot) { return push(Matrix(), &value, true, slot, {}); }

  // Owned leaf that accumulates a gradient (read it back with grad()).
  Var watched(Matrix value) { return push(std::move(value), nullptr, true, -1, {}); }

  Var record(Matrix value, bool requires_grad, Backward backward) {
    return push(std::move(value), nullptr, requires_grad, -1,
                requires_grad ? std::move(backward) : Backward{});
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external != nullptr ? *n.external : n.value;
  }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  Matrix& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      const Matrix& v = value(id);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  void backward(Var root) {
    require(root.rows() == 1 && root.cols() == 1, ErrorKind::dimension,
            "backward without a seed needs a scalar root");
    backward(root, Matrix::Ones(1, 1));
  }

  void backward(Var root, const Matrix& seed) {
    require(root.tape == this, ErrorKind::invalid_argument, "root belongs to another tape");
    require(seed.rows() == root.rows() && seed.cols() == root.cols(), ErrorKind::dimension,
            "backward seed shape mismatch");
    if (!requires_grad(root.id)) return;
    grad(root.id) += seed;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.grad.size() != 0) n.backward(*this, id);
    }
  }

  // fn(slot, gradient) for every parameter leaf that received a gradient.
  template <class Fn>
  void for_each_parameter_grad(Fn&& fn) const {
    for (const Node& n : nodes_) {
      if (n.slot >= 0 && n.grad.size() != 0) fn(n.slot, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    int slot = -1;
    Backward backward;
  };

  Var push(Matrix value, const Matrix* external, bool requires_grad, int slot, Backward fn) {
    nodes_.push_back(Node{std::move(value), external, Matrix(), requires_grad, slot, std::move(fn)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {

inline bool needs_grad(std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(),
                     [](const Var& v) { return v.tape->requires_grad(v.id); });
}

inline void check_same_tape(Var a, Var b) {
  require(a.tape == b.tape, ErrorKind::invalid_argument, "operands live on different tapes");
}

inline void check_same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::dimension,
          std::string(op) + ": shape mismatch");
}

template <class Forward, class Derivative>
Var unary(Var a, Forward&& forward, Derivative&& derivative) {
  Matrix out = a.value().unaryExpr(forward);
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}),
                        [ai, derivative](Tape& t, int self) {
                          if (!t.requires_grad(ai)) return;
                          const Matrix& x = t.value(ai);
                          const Matrix& y = t.value(self);
                          Matrix& gx = t.grad(ai);
                          const Matrix& g = t.grad(self);
                          for (Eigen::Index k = 0; k < x.size(); ++k) {
                            gx(k) += g(k) * derivative(x(k), y(k));
                          }
                        });
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  require(a.cols() == b.rows(), ErrorKind::dimension, "matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  const int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), detail::needs_grad({a, b}), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai).noalias() += g * t.value(bi).transpose();
    if (t.requires_grad(bi)) t.grad(bi).noalias() += t.value(ai).transpose() * g;
  });
}

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  const int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), detail::needs_grad({a, b}), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) t.grad(bi) += g;
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  const int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), detail::needs_grad({a, b}), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) t.grad(bi) -= g;
  });
}

inline Var hadamard(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  const int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), detail::needs_grad({a, b}), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g.cwiseProduct(t.value(bi));
    if (t.requires_grad(bi)) t.grad(bi) += g.cwiseProduct(t.value(ai));
  });
}

inline Var scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai, factor](Tape& t, int self) {
    if (t.requires_grad(ai)) t.grad(ai) += factor * t.grad(self);
  });
}

// a (r×c) + row (1×c) broadcast over rows.
inline Var add_row(Var a, Var row) {
  detail::check_same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::dimension,
          "add_row: bias must be 1×cols");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ai = a.id, ri = row.id;
  return a.tape->record(std::move(out), detail::needs_grad({a, row}), [ai, ri](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(ri)) t.grad(ri) += g.colwise().sum();
  });
}

// a (r×c) + col (r×1) broadcast over columns.
inline Var add_col(Var a, Var col) {
  detail::check_same_tape(a, col);
  require(col.cols() == 1 && col.rows() == a.rows(), ErrorKind::dimension,
          "add_col: bias must be rows×1");
  Matrix out = a.value().colwise() + col.value().col(0);
  const int ai = a.id, ci = col.id;
  return a.tape->record(std::move(out), detail::needs_grad({a, col}), [ai, ci](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(ci)) t.grad(ci) += g.rowwise().sum();
  });
}

inline Var transpose(Var a) {
  Matrix out = a.value().transpose();
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai](Tape& t, int self) {
    if (t.requires_grad(ai)) t.grad(ai) += t.grad(self).transpose();
  });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return detail::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var elu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Var leaky_relu(Var a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var abs(Var a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Var a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// d sqrt(x) at x = 0 is taken as 0.
inline Var sqrt(Var a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai](Tape& t, int self) {
    if (t.requires_grad(ai)) t.grad(ai).array() += t.grad(self)(0, 0);
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

inline Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::invalid_argument, "concat_rows: no inputs");
  Tape* tape = parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool grad = false;
  for (const Var& p : parts) {
    require(p.tape == tape && p.cols() == cols, ErrorKind::dimension, "concat_rows: column mismatch");
    rows += p.rows();
    grad = grad || tape->requires_grad(p.id);
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    ids.push_back(p.id);
  }
  return tape->record(std::move(out), grad, [ids](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index off = 0;
    for (int id : ids) {
      const Eigen::Index r = t.value(id).rows();
      if (t.requires_grad(id)) t.grad(id) += g.middleRows(off, r);
      off += r;
    }
  });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::invalid_argument, "concat_cols: no inputs");
  Tape* tape = parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (const Var& p : parts) {
    require(p.tape == tape && p.rows() == rows, ErrorKind::dimension, "concat_cols: row mismatch");
    cols += p.cols();
    grad = grad || tape->requires_grad(p.id);
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    ids.push_back(p.id);
  }
  return tape->record(std::move(out), grad, [ids](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index off = 0;
    for (int id : ids) {
      const Eigen::Index c = t.value(id).cols();
      if (t.requires_grad(id)) t.grad(id) += g.middleCols(off, c);
      off += c;
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), ErrorKind::dimension,
          "slice_rows out of range");
  Matrix out = a.value().middleRows(start, count);
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai, start, count](Tape& t, int self) {
    if (t.requires_grad(ai)) t.grad(ai).middleRows(start, count) += t.grad(self);
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorKind::dimension,
          "slice_cols out of range");
  Matrix out = a.value().middleCols(start, count);
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai, start, count](Tape& t, int self) {
    if (t.requires_grad(ai)) t.grad(ai).middleCols(start, count) += t.grad(self);
  });
}

inline Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(static_cast<Eigen::Index>(rows[k]) < a.rows(), ErrorKind::dimension,
            "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(k)) = a.value().row(static_cast<Eigen::Index>(rows[k]));
  }
  const int ai = a.id;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai, idx](Tape& t, int self) {
    if (!t.requires_grad(ai)) return;
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ai);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ga.row(static_cast<Eigen::Index>(idx[k])) += g.row(static_cast<Eigen::Index>(k));
    }
  });
}

// Column-major flatten to a (rows*cols)×1 column.
inline Var flatten(Var a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), r * c, 1);
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai, r, c](Tape& t, int self) {
    if (t.requires_grad(ai)) t.grad(ai) += Eigen::Map<const Matrix>(t.grad(self).data(), r, c);
  });
}

inline Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  const int ai = a.id;
  return a.tape->record(std::move(out), detail::needs_grad({a}), [ai](Tape& t, int self) {
    if (!t.requires_grad(ai)) return;
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const Vector dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(ai) += (y.array() * (g.colwise() - dot).array()).matrix();
  });
}

// GATv2 scoring: s_ij = a · LeakyReLU(u_i + v_j), u rows n×k, v rows m×k,
// a k×1. Returns n×m.
inline Var pairwise_scores(Var u, Var v, Var a, double slope) {
  detail::check_same_tape(u, v);
  detail::check_same_tape(u, a);
  require(u.cols() == v.cols() && a.rows() == u.cols() && a.cols() == 1, ErrorKind::dimension,
          "pairwise_scores: dimension mismatch");
  const Matrix& U = u.value();
  const Matrix& V = v.value();
  const Vector av = a.value().col(0);
  const Eigen::Index n = U.rows(), m = V.rows(), k = U.cols();
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index q = 0; q < k; ++q) {
        const double z = U(i, q) + V(j, q);
        s += av(q) * (z > 0.0 ? z : slope * z);
      }
      out(i, j) = s;
    }
  }
  const int ui = u.id, vi = v.id, aid = a.id;
  return u.tape->record(std::move(out), detail::needs_grad({u, v, a}),
                        [ui, vi, aid, slope](Tape& t, int self) {
    const Matrix& U = t.value(ui);
    const Matrix& V = t.value(vi);
    const Matrix& A = t.value(aid);
    const Matrix& g = t.grad(self);
    const bool gu = t.requires_grad(ui), gv = t.requires_grad(vi), ga = t.requires_grad(aid);
    Matrix dU = Matrix::Zero(U.rows(), U.cols());
    Matrix dV = Matrix::Zero(V.rows(), V.cols());
    Matrix dA = Matrix::Zero(A.rows(), 1);
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      for (Eigen::Index j = 0; j < V.rows(); ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        for (Eigen::Index q = 0; q < U.cols(); ++q) {
          const double z = U(i, q) + V(j, q);
          const bool pos = z > 0.0;
          dA(q, 0) += gij * (pos ? z : slope * z);
          const double dz = gij * A(q, 0) * (pos ? 1.0 : slope);
          dU(i, q) += dz;
          dV(j, q) += dz;
        }
      }
    }
    if (gu) t.grad(ui) += dU;
    if (gv) t.grad(vi) += dV;
    if (ga) t.grad(aid) += dA;
  });
}

// Per-row layer normalization with learned gain/bias (both 1×cols).
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
  detail::check_same_tape(x, gain);
  detail::check_same_tape(x, bias);
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 &&
              bias.cols() == x.cols(),
          ErrorKind::dimension, "layer_norm_rows: gain/bias must be 1×cols");
  const Matrix& X = x.value();
  const Eigen::Index r = X.rows(), c = X.cols();
  Matrix xhat(r, c);
  Vector inv_std(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    const double mu = X.row(i).mean();
    const double var = (X.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (X.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int xi = x.id, gi = gain.id, bi = bias.id;
  return x.tape->record(std::move(out), detail::needs_grad({x, gain, bias}),
                        [xi, gi, bi, xhat, inv_std](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(gi)) t.grad(gi) += g.cwiseProduct(xhat).colwise().sum();
    if (t.requires_grad(bi)) t.grad(bi) += g.colwise().sum();
    if (t.requires_grad(xi)) {
      const Matrix dxhat = (g.array().rowwise() * t.value(gi).row(0).array()).matrix();
      Matrix& gx = t.grad(xi);
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        gx.row(i) += inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
      }
    }
  });
}

namespace detail {

// One LSTM cell given pre-activations `a` (4H, gate order i,f,g,o).
// Writes activated gates back into `a` and returns (c, h).
inline void lstm_cell(Eigen::Ref<Vector> a, const Vector& c_prev, Vector& c, Vector& h) {
  const Eigen::Index H = c_prev.size();
  for (Eigen::Index k = 0; k < H; ++k) {
    a(k) = sigmoid(a(k));
    a(H + k) = sigmoid(a(H + k));
    a(2 * H + k) = std::tanh(a(2 * H + k));
    a(3 * H + k) = sigmoid(a(3 * H + k));
  }
  c = a.segment(H, H).cwiseProduct(c_prev) + a.head(H).cwiseProduct(a.segment(2 * H, H));
  h = a.tail(H).cwiseProduct(c.array().tanh().matrix());
}

// Backward through one cell. dh, dc: gradients w.r.t. this step's h and c.
// Returns pre-activation gradients; updates dc to the gradient of c_prev.
inline Vector lstm_cell_backward(const Vector& gates, const Vector& c_prev, const Vector& c,
                                 const Vector& dh, Vector& dc) {
  const Eigen::Index H = c.size();
  Vector da(4 * H);
  for (Eigen::Index k = 0; k < H; ++k) {
    const double i = gates(k), f = gates(H + k), g = gates(2 * H + k), o = gates(3 * H + k);
    const double tc = std::tanh(c(k));
    const double dct = dc(k) + dh(k) * o * (1.0 - tc * tc);
    da(k) = dct * g * i * (1.0 - i);
    da(H + k) = dct * c_prev(k) * f * (1.0 - f);
    da(2 * H + k) = dct * i * (1.0 - g * g);
    da(3 * H + k) = dh(k) * tc * o * (1.0 - o);
    dc(k) = dct * f;
  }
  return da;
}

}  // namespace detail

// LSTM over the columns of `seq` (n_in × T), zero initial state.
// w: 4H × (n_in + H), b: 4H × 1. Returns the final hidden state (H × 1).
inline Var lstm_encode(Var seq, Var w, Var b) {
  detail::check_same_tape(seq, w);
  detail::check_same_tape(seq, b);
  const Eigen::Index n_in = seq.rows(), T = seq.cols();
  const Eigen::Index H = w.rows() / 4;
  require(w.rows() == 4 * H && w.cols() == n_in + H && b.rows() == 4 * H && b.cols() == 1,
          ErrorKind::dimension, "lstm_encode: weight shape mismatch");
  require(T >= 1, ErrorKind::dimension, "lstm_encode: empty sequence");
  const Matrix& W = w.value();
  Matrix gates = W.leftCols(n_in) * seq.value();
  gates.colwise() += b.value().col(0);
  Matrix cells = Matrix::Zero(H, T + 1);
  Matrix hidden = Matrix::Zero(H, T + 1);
  Vector c(H), h(H);
  for (Eigen::Index s = 0; s < T; ++s) {
    gates.col(s).noalias() += W.rightCols(H) * hidden.col(s);
    detail::lstm_cell(gates.col(s), cells.col(s), c, h);
    cells.col(s + 1) = c;
    hidden.col(s + 1) = h;
  }
  Matrix out = hidden.col(T);
  const int si = seq.id, wi = w.id, bi = b.id;
  return seq.tape->record(std::move(out), detail::needs_grad({seq, w, b}),
                          [si, wi, bi, gates, cells, hidden](Tape& t, int self) {
    const Matrix& W = t.value(wi);
    const Matrix& X = t.value(si);
    const Eigen::Index n_in = X.rows(), T = X.cols(), H = W.rows() / 4;
    Matrix da_all(4 * H, T);
    Vector dh = t.grad(self).col(0);
    Vector dc = Vector::Zero(H);
    for (Eigen::Index s = T - 1; s >= 0; --s) {
      da_all.col(s) = detail::lstm_cell_backward(gates.col(s), cells.col(s), cells.col(s + 1), dh, dc);
      dh.noalias() = W.rightCols(H).transpose() * da_all.col(s);
    }
    if (t.requires_grad(wi)) {
      Matrix& gw = t.grad(wi);
      gw.leftCols(n_in).noalias() += da_all * X.transpose();
      gw.rightCols(H).noalias() += da_all * hidden.leftCols(T).transpose();
    }
    if (t.requires_grad(bi)) t.grad(bi) += da_all.rowwise().sum();
    if (t.requires_grad(si)) t.grad(si).noalias() += W.leftCols(n_in).transpose() * da_all;
  });
}

// Autoregressive LSTM decoder. Starts from hidden state h0 (H × 1) with a zero
// cell; step k consumes the previous output (0 at k = 0) and emits
// y_k = out_w · h_k + out_b. w: 4H × (1 + H), b: 4H × 1, out_w: 1 × H,
// out_b: 1 × 1. Returns steps × 1.
inline Var lstm_decode(Var h0, Var w, Var b, Var out_w, Var out_b, Eigen::Index steps) {
  detail::check_same_tape(h0, w);
  const Eigen::Index H = h0.rows();
  require(h0.cols() == 1 && w.rows() == 4 * H && w.cols() == 1 + H && b.rows() == 4 * H &&
              b.cols() == 1 && out_w.rows() == 1 && out_w.cols() == H && out_b.rows() == 1 && out_b.cols() == 1,
          ErrorKind::dimension, "lstm_decode: shape mismatch");
  require(steps >= 1, ErrorKind::dimension, "lstm_decode: steps must be positive");
  const Matrix& W = w.value();
  const double ob = out_b.value()(0, 0);
  Matrix gates(4 * H, steps);
  Matrix cells = Matrix::Zero(H, steps + 1);
  Matrix hidden(H, steps + 1);
  Matrix inputs(1, steps);
  hidden.col(0) = h0.value().col(0);
  Matrix out(steps, 1);
  Vector c(H), h(H);
  double x = 0.0;
  for (Eigen::Index k = 0; k < steps; ++k) {
    inputs(0, k) = x;
    gates.col(k) = W.col(0) * x + b.value().col(0);
    gates.col(k).noalias() += W.rightCols(H) * hidden.col(k);
    detail::lstm_cell(gates.col(k), cells.col(k), c, h);
    cells.col(k + 1) = c;
    hidden.col(k + 1) = h;
    x = out_w.value().row(0).dot(h) + ob;
    out(k, 0) = x;
  }
  const int hi = h0.id, wi = w.id, bi = b.id, owi = out_w.id, obi = out_b.id;
  return h0.tape->record(std::move(out), detail::needs_grad({h0, w, b, out_w, out_b}),
                         [hi, wi, bi, owi, obi, gates, cells, hidden, inputs](Tape& t, int self) {
    const Matrix& W = t.value(wi);
    const Matrix& OW = t.value(owi);
    const Matrix& g = t.grad(self);
    const Eigen::Index H = W.rows() / 4, steps = g.rows();
    Matrix da_all(4 * H, steps);
    Matrix d_out_w = Matrix::Zero(1, H);
    double d_out_b = 0.0;
    Vector dh_carry = Vector::Zero(H);
    Vector dc = Vector::Zero(H);
    double dx_next = 0.0;
    for (Eigen::Index k = steps - 1; k >= 0; --k) {
      const double gy = g(k, 0) + dx_next;
      d_out_w.row(0) += gy * hidden.col(k + 1).transpose();
      d_out_b += gy;
      const Vector dh = dh_carry + gy * OW.row(0).transpose();
      da_all.col(k) = detail::lstm_cell_backward(gates.col(k), cells.col(k), cells.col(k + 1), dh, dc);
      dx_next = W.col(0).dot(da_all.col(k));
      dh_carry.noalias() = W.rightCols(H).transpose() * da_all.col(k);
    }
    if (t.requires_grad(hi)) t.grad(hi).col(0) += dh_carry;
    if (t.requires_grad(wi)) {
      Matrix& gw = t.grad(wi);
      gw.col(0).noalias() += da_all * inputs.row(0).transpose();
      gw.rightCols(H).noalias() += da_all * hidden.leftCols(steps).transpose();
    }
    if (t.requires_grad(bi)) t.grad(bi) += da_all.rowwise().sum();
    if (t.requires_grad(owi)) t.grad(owi) += d_out_w;
    if (t.requires_grad(obi)) t.grad(obi)(0, 0) += d_out_b;
  });
}

}  // namespace stts::ad
