#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace s3m {

namespace detail {

// Shared scalar/linear kernels. The tape ops and the gradient-free forward
// path in model.hpp both call these, which keeps the two routes bit-identical.
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) {
  // log(1 + exp(x)) without overflow.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline void matvec_accum(const double* w, std::size_t m, std::size_t n,
                         const double* x, double* out) {
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    const double* row = w + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

}  // namespace detail

// Dense 64-bit float tensor, rank 1 or 2, row-major. `grad` doubles as the
// parameter gradient (for trainables) and the adjoint buffer (on a tape).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty unless tracked

  Tensor() = default;

  static Tensor zeros(std::size_t n) {
    Tensor t;
    t.shape = {n};
    t.values.assign(n, 0.0);
    return t;
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    Tensor t;
    t.shape = {rows, cols};
    t.values.assign(rows * cols, 0.0);
    return t;
  }

  static Tensor vec(std::vector<double> v) {
    Tensor t;
    t.shape = {v.size()};
    t.values = std::move(v);
    return t;
  }

  static Tensor mat(std::size_t rows, std::size_t cols, std::vector<double> v) {
    if (v.size() != rows * cols)
      throw std::invalid_argument("Tensor::mat: " + std::to_string(v.size()) +
                                  " values for a " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + " matrix");
    Tensor t;
    t.shape = {rows, cols};
    t.values = std::move(v);
    return t;
  }

  std::size_t size() const { return values.size(); }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  bool tracked() const { return grad.size() == values.size() && !values.empty(); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }

  void zero_grad() { grad.assign(values.size(), 0.0); }

  std::string shape_str() const {
    if (shape.empty()) return "[]";
    if (is_vector()) return "[" + std::to_string(shape[0]) + "]";
    return std::to_string(shape[0]) + "x" + std::to_string(shape[1]);
  }
};

// Reverse-mode tape. Operations evaluate eagerly and record a pull-back
// closure; backward() runs the closures in reverse creation order, which is
// a valid topological order because ops only reference earlier nodes.
//
// A tape belongs to one logical thread and is typically cleared and rebuilt
// per training example. backward() may be called more than once: node
// adjoints are reset on entry, but gradients flushed into leaf tensors
// accumulate, so two backward() calls double the external grads.
class Tape {
 public:
  using Node = std::size_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() { recs_.clear(); }
  std::size_t size() const { return recs_.size(); }

  const Tensor& value(Node id) const { return recs_[id].val; }

  double scalar(Node id) const {
    const Tensor& t = recs_[id].val;
    if (t.size() != 1)
      throw std::invalid_argument("scalar: node has shape " + t.shape_str());
    return t.values[0];
  }

  // Tracked leaf: backward() accumulates into `param.grad`.
  Node leaf(Tensor& param) {
    param.ensure_grad();
    Node id = push(param);  // copies values
    recs_[id].external = &param;
    return id;
  }

  // Untracked constant input.
  Node input(Tensor value) { return push(std::move(value)); }

  Node input(std::vector<double> v) { return push(Tensor::vec(std::move(v))); }

  // Row lookup into a trainable matrix (embedding). Grads scatter straight
  // into table.grad without materializing the whole table on the tape.
  Node embed(Tensor& table, std::size_t row) {
    if (!table.is_matrix())
      throw std::invalid_argument("embed: table has shape " + table.shape_str());
    if (row >= table.rows())
      throw std::invalid_argument("embed: row " + std::to_string(row) +
                                  " out of range for " + table.shape_str());
    table.ensure_grad();
    std::size_t n = table.cols();
    Tensor out = Tensor::zeros(n);
    const double* src = table.values.data() + row * n;
    std::copy(src, src + n, out.values.begin());
    Node id = push(std::move(out));
    Tensor* tbl = &table;
    recs_[id].pull = [id, tbl, row, n](Tape& t) {
      const double* g = t.recs_[id].val.grad.data();
      double* dst = tbl->grad.data() + row * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
    };
    return id;
  }

  Node matvec(Node w, Node x) {
    const Tensor& wt = recs_[w].val;
    const Tensor& xt = recs_[x].val;
    if (!wt.is_matrix() || !xt.is_vector() || wt.cols() != xt.size())
      throw std::invalid_argument("matvec: weight is " + wt.shape_str() +
                                  " but input is " + xt.shape_str());
    std::size_t m = wt.rows(), n = wt.cols();
    Tensor out = Tensor::zeros(m);
    detail::matvec_accum(wt.values.data(), m, n, xt.values.data(), out.values.data());
    Node id = push(std::move(out));
    recs_[id].pull = [id, w, x, m, n](Tape& t) {
      const double* g = t.recs_[id].val.grad.data();
      const double* wv = t.recs_[w].val.values.data();
      const double* xv = t.recs_[x].val.values.data();
      double* wg = t.recs_[w].val.grad.data();
      double* xg = t.recs_[x].val.grad.data();
      for (std::size_t r = 0; r < m; ++r) {
        double gr = g[r];
        for (std::size_t c = 0; c < n; ++c) {
          wg[r * n + c] += gr * xv[c];
          xg[c] += wv[r * n + c] * gr;
        }
      }
    };
    return id;
  }

  Node add(Node a, Node b) {
    check_same_shape("add", a, b);
    Tensor out = recs_[a].val;
    out.grad.clear();
    const std::vector<double>& bv = recs_[b].val.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv[i];
    Node id = push(std::move(out));
    recs_[id].pull = [id, a, b](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        t.recs_[a].val.grad[i] += g[i];
        t.recs_[b].val.grad[i] += g[i];
      }
    };
    return id;
  }

  Node sub(Node a, Node b) {
    check_same_shape("sub", a, b);
    Tensor out = recs_[a].val;
    out.grad.clear();
    const std::vector<double>& bv = recs_[b].val.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= bv[i];
    Node id = push(std::move(out));
    recs_[id].pull = [id, a, b](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        t.recs_[a].val.grad[i] += g[i];
        t.recs_[b].val.grad[i] -= g[i];
      }
    };
    return id;
  }

  Node hadamard(Node a, Node b) {
    check_same_shape("hadamard", a, b);
    Tensor out = recs_[a].val;
    out.grad.clear();
    const std::vector<double>& bv = recs_[b].val.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= bv[i];
    Node id = push(std::move(out));
    recs_[id].pull = [id, a, b](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      const std::vector<double>& av = t.recs_[a].val.values;
      const std::vector<double>& bv2 = t.recs_[b].val.values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        t.recs_[a].val.grad[i] += g[i] * bv2[i];
        t.recs_[b].val.grad[i] += g[i] * av[i];
      }
    };
    return id;
  }

  Node scale(Node a, double c) {
    Tensor out = recs_[a].val;
    out.grad.clear();
    for (double& v : out.values) v *= c;
    Node id = push(std::move(out));
    recs_[id].pull = [id, a, c](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      for (std::size_t i = 0; i < g.size(); ++i) t.recs_[a].val.grad[i] += c * g[i];
    };
    return id;
  }

  Node abs(Node a) {
    Tensor out = recs_[a].val;
    out.grad.clear();
    for (double& v : out.values) v = std::fabs(v);
    Node id = push(std::move(out));
    recs_[id].pull = [id, a](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      const std::vector<double>& av = t.recs_[a].val.values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
        t.recs_[a].val.grad[i] += s * g[i];
      }
    };
    return id;
  }

  Node concat(Node a, Node b) {
    const Tensor& at = recs_[a].val;
    const Tensor& bt = recs_[b].val;
    if (!at.is_vector() || !bt.is_vector())
      throw std::invalid_argument("concat: expects vectors, got " + at.shape_str() +
                                  " and " + bt.shape_str());
    Tensor out = Tensor::zeros(at.size() + bt.size());
    std::copy(at.values.begin(), at.values.end(), out.values.begin());
    std::copy(bt.values.begin(), bt.values.end(), out.values.begin() + at.size());
    std::size_t na = at.size();
    Node id = push(std::move(out));
    recs_[id].pull = [id, a, b, na](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      for (std::size_t i = 0; i < na; ++i) t.recs_[a].val.grad[i] += g[i];
      for (std::size_t i = na; i < g.size(); ++i) t.recs_[b].val.grad[i - na] += g[i];
    };
    return id;
  }

  Node sigmoid(Node a) {
    Tensor out = recs_[a].val;
    out.grad.clear();
    for (double& v : out.values) v = detail::sigmoid(v);
    Node id = push(std::move(out));
    recs_[id].pull = [id, a](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      const std::vector<double>& y = t.recs_[id].val.values;
      for (std::size_t i = 0; i < g.size(); ++i)
        t.recs_[a].val.grad[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return id;
  }

  Node tanh(Node a) {
    Tensor out = recs_[a].val;
    out.grad.clear();
    for (double& v : out.values) v = std::tanh(v);
    Node id = push(std::move(out));
    recs_[id].pull = [id, a](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      const std::vector<double>& y = t.recs_[id].val.values;
      for (std::size_t i = 0; i < g.size(); ++i)
        t.recs_[a].val.grad[i] += g[i] * (1.0 - y[i] * y[i]);
    };
    return id;
  }

  Node relu(Node a) {
    Tensor out = recs_[a].val;
    out.grad.clear();
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    Node id = push(std::move(out));
    recs_[id].pull = [id, a](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      const std::vector<double>& av = t.recs_[a].val.values;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > 0.0) t.recs_[a].val.grad[i] += g[i];
    };
    return id;
  }

  Node softplus(Node a) {
    Tensor out = recs_[a].val;
    out.grad.clear();
    for (double& v : out.values) v = detail::softplus(v);
    Node id = push(std::move(out));
    recs_[id].pull = [id, a](Tape& t) {
      const std::vector<double>& g = t.recs_[id].val.grad;
      const std::vector<double>& av = t.recs_[a].val.values;
      for (std::size_t i = 0; i < g.size(); ++i)
        t.recs_[a].val.grad[i] += g[i] * detail::sigmoid(av[i]);
    };
    return id;
  }

  Node sum(Node a) {
    double acc = 0.0;
    for (double v : recs_[a].val.values) acc += v;
    Node id = push(Tensor::vec({acc}));
    recs_[id].pull = [id, a](Tape& t) {
      double g = t.recs_[id].val.grad[0];
      for (double& d : t.recs_[a].val.grad) d += g;
    };
    return id;
  }

  // Reverse sweep from a scalar loss. Accumulates into the grad buffers of
  // all leaf tensors reachable from `loss`.
  void backward(Node loss) {
    const Tensor& lt = recs_[loss].val;
    if (lt.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  lt.shape_str());
    for (Rec& r : recs_) std::fill(r.val.grad.begin(), r.val.grad.end(), 0.0);
    recs_[loss].val.grad[0] = 1.0;
    for (std::size_t i = recs_.size(); i-- > 0;) {
      Rec& r = recs_[i];
      if (r.pull) r.pull(*this);
      if (r.external) {
        for (std::size_t k = 0; k < r.val.grad.size(); ++k)
          r.external->grad[k] += r.val.grad[k];
      }
    }
  }

 private:
  struct Rec {
    Tensor val;
    std::function<void(Tape&)> pull;  // empty for leaves/inputs
    Tensor* external = nullptr;       // set for tracked leaves
  };

  Node push(Tensor t) {
    t.ensure_grad();
    t.zero_grad();
    recs_.push_back(Rec{std::move(t), nullptr, nullptr});
    return recs_.size() - 1;
  }

  void check_same_shape(const char* op, Node a, Node b) const {
    const Tensor& at = recs_[a].val;
    const Tensor& bt = recs_[b].val;
    if (at.shape != bt.shape)
      throw std::invalid_argument(std::string(op) + ": shape mismatch, " +
                                  at.shape_str() + " vs " + bt.shape_str());
  }

  std::vector<Rec> recs_;
};

}  // namespace s3m
