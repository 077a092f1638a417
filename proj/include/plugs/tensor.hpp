#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "plugs/common.hpp"

namespace plugs {

// Dense row-major tensors of doubles with reverse-mode autodiff. A Tensor is
// a shared handle to a node; primitives create fresh nodes and, when a tape
// is active and any input requires grad, record a backward closure on it.
// Nodes are treated as immutable once a primitive has produced them.

struct TensorNode {
  std::vector<size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<size_t> shape, std::vector<double> data,
         bool requires_grad = false) {
    size_t n = 1;
    for (size_t d : shape) {
      if (d == 0) throw DimensionError("tensor: zero dimension");
      n *= d;
    }
    if (n != data.size())
      throw DimensionError("tensor: shape/data size mismatch (" +
                           std::to_string(n) + " vs " +
                           std::to_string(data.size()) + ")");
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0),
                  requires_grad);
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t size() const { return node_->value.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& data() const { return node_->value; }
  double operator[](size_t i) const { return node_->value[i]; }
  double at(size_t i, size_t j) const {
    return node_->value[i * node_->shape[1] + j];
  }

  // Gradient of the last backward pass; zeros if the node was never reached.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  // In-place update for optimizer use only; never call on a tensor that a
  // live tape references.
  std::vector<double>& mutable_data() { return node_->value; }

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

struct TapeEntry {
  const char* op;
  std::vector<NodePtr> inputs;
  NodePtr output;
  // Propagates output->grad into inputs' grads.
  std::function<void()> backward;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    if (active_tape() == this) active_tape() = nullptr;
  }

  // Makes this tape the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_tape()) { active_tape() = &t; }
    ~Scope() { active_tape() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_tape(); }

  void record(const char* op, std::vector<NodePtr> inputs, NodePtr output,
              std::function<void()> backward) {
    entries_.push_back(
        {op, std::move(inputs), std::move(output), std::move(backward)});
  }

  size_t size() const { return entries_.size(); }
  const std::vector<TapeEntry>& entries() const { return entries_; }

  bool consumed() const { return consumed_; }
  void mark_consumed() {
    if (consumed_)
      throw Error("backward: tape already consumed; reset before reuse");
    consumed_ = true;
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  static Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<TapeEntry> entries_;
  bool consumed_ = false;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

inline void ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// ---- raw matmul kernels (row-major, c must be zero-initialized) ----

inline void matmul_nn_raw(const double* __restrict a, const double* __restrict b,
                          double* __restrict c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
inline void matmul_nt_raw(const double* __restrict a, const double* __restrict b,
                          double* __restrict c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
inline void matmul_tn_raw(const double* __restrict a, const double* __restrict b,
                          double* __restrict c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor");
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions differ (" +
                         std::to_string(k) + " vs " + std::to_string(k2) +
                         ")");
  std::vector<double> out(m * n, 0.0);
  detail::matmul_nn_raw(a.data().data(), b.data().data(), out.data(), m, k, n);
  bool g = detail::any_requires_grad({&a, &b});
  detail::check_finite("matmul", out);
  Tensor res({m, n}, std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr an = a.node(), bn = b.node(), on = res.node();
    tape->record("matmul", {an, bn}, on, [an, bn, on, m, k, n]() {
      if (an->requires_grad) {
        detail::ensure_grad(an);
        detail::matmul_nt_raw(on->grad.data(), bn->value.data(),
                              an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        detail::ensure_grad(bn);
        detail::matmul_tn_raw(an->value.data(), on->grad.data(),
                              bn->grad.data(), m, k, n);
      }
    });
  }
  return res;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  bool g = detail::any_requires_grad({&a, &b});
  detail::check_finite("add", out);
  Tensor res(a.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr an = a.node(), bn = b.node(), on = res.node();
    tape->record("add", {an, bn}, on, [an, bn, on]() {
      for (NodePtr n : {an, bn}) {
        if (!n->requires_grad) continue;
        detail::ensure_grad(n);
        for (size_t i = 0; i < on->grad.size(); ++i) n->grad[i] += on->grad[i];
      }
    });
  }
  return res;
}

// Adds a length-n bias row to every row of a [m,n] matrix.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_bias: bias length must equal row width");
  const size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.data());
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  bool g = detail::any_requires_grad({&x, &bias});
  detail::check_finite("add_bias", out);
  Tensor res(x.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), bn = bias.node(), on = res.node();
    tape->record("add_bias", {xn, bn}, on, [xn, bn, on, m, n]() {
      if (xn->requires_grad) {
        detail::ensure_grad(xn);
        for (size_t i = 0; i < m * n; ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        detail::ensure_grad(bn);
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) bn->grad[j] += on->grad[i * n + j];
      }
    });
  }
  return res;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  bool g = a.requires_grad();
  detail::check_finite("scale", out);
  Tensor res(a.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr an = a.node(), on = res.node();
    tape->record("scale", {an}, on, [an, on, c]() {
      detail::ensure_grad(an);
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += c * on->grad[i];
    });
  }
  return res;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  bool g = detail::any_requires_grad({&a, &b});
  detail::check_finite("mul", out);
  Tensor res(a.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr an = a.node(), bn = b.node(), on = res.node();
    tape->record("mul", {an, bn}, on, [an, bn, on]() {
      if (an->requires_grad) {
        detail::ensure_grad(an);
        for (size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += bn->value[i] * on->grad[i];
      }
      if (bn->requires_grad) {
        detail::ensure_grad(bn);
        for (size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += an->value[i] * on->grad[i];
      }
    });
  }
  return res;
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  bool g = a.requires_grad();
  Tensor res(a.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr an = a.node(), on = res.node();
    tape->record("relu", {an}, on, [an, on]() {
      detail::ensure_grad(an);
      for (size_t i = 0; i < on->grad.size(); ++i)
        if (an->value[i] > 0.0) an->grad[i] += on->grad[i];
    });
  }
  return res;
}

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  bool g = a.requires_grad();
  Tensor res({n, m}, std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr an = a.node(), on = res.node();
    tape->record("transpose", {an}, on, [an, on, m, n]() {
      detail::ensure_grad(an);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
    });
  }
  return res;
}

// Softmax along the given axis of a rank-2 tensor (axis 1 = rows), or over
// the whole vector for rank 1. Max-subtracted for stability.
inline Tensor softmax(const Tensor& x, int axis = -1) {
  size_t rows, cols;
  if (x.rank() == 1) {
    rows = 1;
    cols = x.dim(0);
    if (!(axis == -1 || axis == 0))
      throw DimensionError("softmax: axis out of range for rank-1 tensor");
  } else if (x.rank() == 2) {
    if (axis == -1) axis = 1;
    if (axis != 0 && axis != 1)
      throw DimensionError("softmax: axis out of range");
    if (axis == 0) return transpose(softmax(transpose(x), 1));
    rows = x.dim(0);
    cols = x.dim(1);
  } else {
    throw DimensionError("softmax: rank > 2 unsupported");
  }
  std::vector<double> out(x.size());
  for (size_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * cols;
    double mx = row[0];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      double e = std::exp(row[j] - mx);
      out[i * cols + j] = e;
      sum += e;
    }
    for (size_t j = 0; j < cols; ++j) out[i * cols + j] /= sum;
  }
  bool g = x.requires_grad();
  detail::check_finite("softmax", out);
  Tensor res(x.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), on = res.node();
    tape->record("softmax", {xn}, on, [xn, on, rows, cols]() {
      detail::ensure_grad(xn);
      for (size_t i = 0; i < rows; ++i) {
        const double* y = on->value.data() + i * cols;
        const double* dy = on->grad.data() + i * cols;
        double dot = 0.0;
        for (size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
        double* dx = xn->grad.data() + i * cols;
        for (size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return res;
}

// Row softmax with a key mask: masked columns get exactly zero weight and
// exactly zero gradient flow, so masked positions cannot influence outputs.
inline Tensor masked_softmax_rows(const Tensor& x,
                                  const std::vector<uint8_t>& key_mask) {
  require_matrix(x, "masked_softmax_rows");
  const size_t rows = x.dim(0), cols = x.dim(1);
  if (key_mask.size() != cols)
    throw DimensionError("masked_softmax_rows: mask length mismatch");
  std::vector<double> out(x.size(), 0.0);
  for (size_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < cols; ++j)
      if (key_mask[j] && row[j] > mx) mx = row[j];
    if (!std::isfinite(mx))
      throw NumericError("masked_softmax_rows: all keys masked");
    double sum = 0.0;
    for (size_t j = 0; j < cols; ++j) {
      if (!key_mask[j]) continue;
      double e = std::exp(row[j] - mx);
      out[i * cols + j] = e;
      sum += e;
    }
    for (size_t j = 0; j < cols; ++j)
      if (key_mask[j]) out[i * cols + j] /= sum;
  }
  bool g = x.requires_grad();
  detail::check_finite("masked_softmax_rows", out);
  Tensor res(x.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), on = res.node();
    std::vector<uint8_t> mask = key_mask;
    tape->record("masked_softmax_rows", {xn}, on,
                 [xn, on, rows, cols, mask = std::move(mask)]() {
                   detail::ensure_grad(xn);
                   for (size_t i = 0; i < rows; ++i) {
                     const double* y = on->value.data() + i * cols;
                     const double* dy = on->grad.data() + i * cols;
                     double dot = 0.0;
                     for (size_t j = 0; j < cols; ++j)
                       if (mask[j]) dot += y[j] * dy[j];
                     double* dx = xn->grad.data() + i * cols;
                     for (size_t j = 0; j < cols; ++j)
                       if (mask[j]) dx[j] += y[j] * (dy[j] - dot);
                   }
                 });
  }
  return res;
}

// Causal row softmax over a square score matrix: row i puts exactly zero
// weight (and zero gradient flow) on columns j > i, so position i cannot
// see later positions.
inline Tensor causal_softmax_rows(const Tensor& x) {
  require_matrix(x, "causal_softmax_rows");
  const size_t rows = x.dim(0), cols = x.dim(1);
  if (rows != cols)
    throw DimensionError("causal_softmax_rows: matrix must be square");
  std::vector<double> out(x.size(), 0.0);
  for (size_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * cols;
    double mx = row[0];
    for (size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j <= i; ++j) {
      double e = std::exp(row[j] - mx);
      out[i * cols + j] = e;
      sum += e;
    }
    for (size_t j = 0; j <= i; ++j) out[i * cols + j] /= sum;
  }
  bool g = x.requires_grad();
  detail::check_finite("causal_softmax_rows", out);
  Tensor res(x.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), on = res.node();
    tape->record("causal_softmax_rows", {xn}, on, [xn, on, rows, cols]() {
      detail::ensure_grad(xn);
      for (size_t i = 0; i < rows; ++i) {
        const double* y = on->value.data() + i * cols;
        const double* dy = on->grad.data() + i * cols;
        double dot = 0.0;
        for (size_t j = 0; j <= i; ++j) dot += y[j] * dy[j];
        double* dx = xn->grad.data() + i * cols;
        for (size_t j = 0; j <= i; ++j) dx[j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return res;
}

// Per-row layer normalization with affine parameters gamma, beta (length =
// row width). Variance is the biased (1/n) estimator.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-6) {
  require_matrix(x, "layer_norm");
  const size_t rows = x.dim(0), n = x.dim(1);
  if (n < 2) throw DimensionError("layer_norm: last axis must have length >= 2");
  if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 ||
      beta.dim(0) != n)
    throw DimensionError("layer_norm: gamma/beta length mismatch");
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (size_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * n;
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (size_t j = 0; j < n; ++j) {
      double h = (row[j] - mean) * is;
      xhat[i * n + j] = h;
      out[i * n + j] = gamma[j] * h + beta[j];
    }
  }
  bool g = detail::any_requires_grad({&x, &gamma, &beta});
  detail::check_finite("layer_norm", out);
  Tensor res(x.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(),
            on = res.node();
    tape->record(
        "layer_norm", {xn, gn, bn}, on,
        [xn, gn, bn, on, rows, n, xhat = std::move(xhat),
         inv_std = std::move(inv_std)]() {
          for (size_t i = 0; i < rows; ++i) {
            const double* dy = on->grad.data() + i * n;
            const double* h = xhat.data() + i * n;
            if (gn->requires_grad) {
              detail::ensure_grad(gn);
              for (size_t j = 0; j < n; ++j) gn->grad[j] += dy[j] * h[j];
            }
            if (bn->requires_grad) {
              detail::ensure_grad(bn);
              for (size_t j = 0; j < n; ++j) bn->grad[j] += dy[j];
            }
            if (xn->requires_grad) {
              detail::ensure_grad(xn);
              // dL/dx = is/n * (n*dh - sum(dh) - h * sum(dh*h)),
              // dh = dy * gamma
              double sum_dh = 0.0, sum_dh_h = 0.0;
              for (size_t j = 0; j < n; ++j) {
                double dh = dy[j] * gn->value[j];
                sum_dh += dh;
                sum_dh_h += dh * h[j];
              }
              double* dx = xn->grad.data() + i * n;
              double is = inv_std[i];
              double nn = static_cast<double>(n);
              for (size_t j = 0; j < n; ++j) {
                double dh = dy[j] * gn->value[j];
                dx[j] += is * (dh - sum_dh / nn - h[j] * sum_dh_h / nn);
              }
            }
          }
        });
  }
  return res;
}

// Mean negative log-likelihood of `targets` under row-softmax of `logits`,
// averaged over positions where pad_mask is true. Fused log-sum-exp.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<uint8_t>& pad_mask) {
  require_matrix(logits, "cross_entropy");
  const size_t t_len = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != t_len || pad_mask.size() != t_len)
    throw DimensionError("cross_entropy: targets/mask length mismatch");
  size_t count = 0;
  for (uint8_t m : pad_mask) count += m ? 1 : 0;
  if (count == 0)
    throw NumericError("cross_entropy: all positions padded, loss undefined");
  for (size_t t = 0; t < t_len; ++t) {
    if (pad_mask[t] && (targets[t] < 0 || static_cast<size_t>(targets[t]) >= vocab))
      throw DimensionError("cross_entropy: target id out of vocabulary range");
  }
  // Save softmax probabilities for the backward pass.
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (size_t t = 0; t < t_len; ++t) {
    const double* row = logits.data().data() + t * vocab;
    double mx = row[0];
    for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j < vocab; ++j) {
      double e = std::exp(row[j] - mx);
      probs[t * vocab + j] = e;
      sum += e;
    }
    for (size_t j = 0; j < vocab; ++j) probs[t * vocab + j] /= sum;
    if (pad_mask[t]) {
      double lse = mx + std::log(sum);
      total += lse - row[targets[t]];
    }
  }
  double loss = total / static_cast<double>(count);
  bool g = logits.requires_grad();
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  Tensor res({1}, {loss}, g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr ln = logits.node(), on = res.node();
    std::vector<int> tg = targets;
    std::vector<uint8_t> pm = pad_mask;
    tape->record("cross_entropy", {ln}, on,
                 [ln, on, t_len, vocab, count, probs = std::move(probs),
                  tg = std::move(tg), pm = std::move(pm)]() {
                   detail::ensure_grad(ln);
                   double s = on->grad[0] / static_cast<double>(count);
                   for (size_t t = 0; t < t_len; ++t) {
                     if (!pm[t]) continue;
                     double* dl = ln->grad.data() + t * vocab;
                     const double* p = probs.data() + t * vocab;
                     for (size_t j = 0; j < vocab; ++j) dl[j] += s * p[j];
                     dl[tg[t]] -= s;
                   }
                 });
  }
  return res;
}

// Gathers rows of `table` at `ids`; gradient scatter-adds into the table.
inline Tensor embedding_lookup(const Tensor& table,
                               const std::vector<int>& ids) {
  require_matrix(table, "embedding_lookup");
  const size_t vocab = table.dim(0), dim = table.dim(1);
  std::vector<double> out(ids.size() * dim);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= vocab)
      throw VocabError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " out of range");
    std::copy_n(table.data().data() + static_cast<size_t>(ids[i]) * dim, dim,
                out.data() + i * dim);
  }
  bool g = table.requires_grad();
  Tensor res({ids.size(), dim}, std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr tn = table.node(), on = res.node();
    std::vector<int> idv = ids;
    tape->record("embedding_lookup", {tn}, on,
                 [tn, on, dim, idv = std::move(idv)]() {
                   detail::ensure_grad(tn);
                   for (size_t i = 0; i < idv.size(); ++i) {
                     double* dst =
                         tn->grad.data() + static_cast<size_t>(idv[i]) * dim;
                     const double* src = on->grad.data() + i * dim;
                     for (size_t j = 0; j < dim; ++j) dst[j] += src[j];
                   }
                 });
  }
  return res;
}

// Vertical concatenation of matrices with equal widths.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty input");
  const size_t n = parts[0].dim(1);
  size_t rows = 0;
  bool g = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: width mismatch");
    rows += p.dim(0);
    g = g || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor res({rows, n}, std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    std::vector<NodePtr> ins;
    for (const Tensor& p : parts) ins.push_back(p.node());
    NodePtr on = res.node();
    tape->record("concat_rows", ins, on, [ins, on, n]() {
      size_t off = 0;
      for (const NodePtr& in : ins) {
        size_t cnt = in->value.size();
        if (in->requires_grad) {
          detail::ensure_grad(in);
          for (size_t i = 0; i < cnt; ++i) in->grad[i] += on->grad[off + i];
        }
        off += cnt;
      }
    });
  }
  return res;
}

// Column slice [start, start+len) of a matrix.
inline Tensor slice_cols(const Tensor& x, size_t start, size_t len) {
  require_matrix(x, "slice_cols");
  const size_t m = x.dim(0), n = x.dim(1);
  if (start + len > n) throw DimensionError("slice_cols: out of range");
  std::vector<double> out(m * len);
  for (size_t i = 0; i < m; ++i)
    std::copy_n(x.data().data() + i * n + start, len, out.data() + i * len);
  bool g = x.requires_grad();
  Tensor res({m, len}, std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), on = res.node();
    tape->record("slice_cols", {xn}, on, [xn, on, m, n, start, len]() {
      detail::ensure_grad(xn);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < len; ++j)
          xn->grad[i * n + start + j] += on->grad[i * len + j];
    });
  }
  return res;
}

// Horizontal concatenation of matrices with equal heights.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty input");
  const size_t m = parts[0].dim(0);
  size_t n = 0;
  bool g = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: height mismatch");
    n += p.dim(1);
    g = g || p.requires_grad();
  }
  std::vector<double> out(m * n);
  size_t off = 0;
  for (const Tensor& p : parts) {
    size_t w = p.dim(1);
    for (size_t i = 0; i < m; ++i)
      std::copy_n(p.data().data() + i * w, w, out.data() + i * n + off);
    off += w;
  }
  Tensor res({m, n}, std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    std::vector<NodePtr> ins;
    for (const Tensor& p : parts) ins.push_back(p.node());
    NodePtr on = res.node();
    tape->record("concat_cols", ins, on, [ins, on, m, n]() {
      size_t off2 = 0;
      for (const NodePtr& in : ins) {
        size_t w = in->shape[1];
        if (in->requires_grad) {
          detail::ensure_grad(in);
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < w; ++j)
              in->grad[i * w + j] += on->grad[i * n + off2 + j];
        }
        off2 += w;
      }
    });
  }
  return res;
}

// Inverted dropout with a stateless mask: element i is kept iff
// hash(seed, salt, i) >= p. Identity when p == 0.
inline Tensor dropout(const Tensor& x, double p, uint64_t seed, uint64_t salt) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  const double inv_keep = 1.0 / (1.0 - p);
  std::vector<uint8_t> keep(x.size());
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    keep[i] = hash_double(seed, salt, i) >= p ? 1 : 0;
    out[i] = keep[i] ? x[i] * inv_keep : 0.0;
  }
  bool g = x.requires_grad();
  Tensor res(x.shape(), std::move(out), g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), on = res.node();
    tape->record("dropout", {xn}, on,
                 [xn, on, inv_keep, keep = std::move(keep)]() {
                   detail::ensure_grad(xn);
                   for (size_t i = 0; i < on->grad.size(); ++i)
                     if (keep[i]) xn->grad[i] += on->grad[i] * inv_keep;
                 });
  }
  return res;
}

// Sum of all elements, as a scalar tensor.
inline Tensor sum(const Tensor& x) {
  double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  bool g = x.requires_grad();
  Tensor res({1}, {s}, g);
  if (Tape* tape = Tape::active(); tape && g) {
    NodePtr xn = x.node(), on = res.node();
    tape->record("sum", {xn}, on, [xn, on]() {
      detail::ensure_grad(xn);
      for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-traverses the tape from `loss` (a scalar). Gradients accumulate
// into every recorded node's grad buffer; leaves keep theirs until zeroed.
// A second call on the same tape without reset() is an error.
inline void backward(Tape& tape, const Tensor& loss) {
  if (loss.size() != 1) throw DimensionError("backward: loss must be scalar");
  tape.mark_consumed();
  detail::ensure_grad(loss.node());
  loss.node()->grad[0] += 1.0;
  const auto& entries = tape.entries();
  for (size_t i = entries.size(); i-- > 0;) {
    const TapeEntry& e = entries[i];
    if (e.output->grad.empty()) continue;  // no gradient reached this node
    e.backward();
  }
}

}  // namespace plugs
