#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is an append-only tape: every op evaluates eagerly, stores its
// output and a closure that pushes the upstream gradient into its inputs.
// Graphs are built per forward pass and consumed by a single backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <deque>
#include <vector>

#include "jiadf/error.hpp"
#include "jiadf/tensor.hpp"

namespace jiadf {

// Named learnable tensors with gradient buffers, iterated in insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    Tensor grad(init.shape());
    entries_.push_back({name, std::move(init), std::move(grad)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& value(const std::string& name) { return entries_[index(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index(name)].value; }
  Tensor& grad(const std::string& name) { return entries_[index(name)].grad; }
  const Tensor& grad(const std::string& name) const { return entries_[index(name)].grad; }

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  // Training graph: backward() writes parameter gradients into the store.
  explicit Graph(ParamStore& store) : read_(&store), write_(&store) {}
  // Inference graph: parameters are read only.
  explicit Graph(const ParamStore& store) : read_(&store) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that receives a gradient but is not a parameter (inputs, constants).
  Var leaf(Tensor value) { return push(std::move(value), {}); }
  Var constant(Tensor value) { return leaf(std::move(value)); }

  // Parameter leaf; one node per parameter per graph.
  Var param(const std::string& name) {
    if (!read_) throw GraphError("graph has no parameter store");
    std::size_t idx = read_->index(name);
    auto it = param_nodes_.find(idx);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(read_->entry(idx).value, {});
    param_nodes_.emplace(idx, v.id);
    return v;
  }

  // Records an op output. Non-finite results are rejected here so that every
  // op shares the check.
  Var push(Tensor value, BackwardFn fn, const char* op = "leaf") {
    if (consumed_) throw GraphError("graph reused after backward");
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  // Gradient of the last backward() loss w.r.t. a node; zeros if unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const ParamStore* store() const { return read_; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Afterwards every
  // parameter's gradient buffer in the store holds d(loss)/d(param); params
  // absent from this graph get exact zeros.
  void backward(Var loss) {
    if (consumed_) throw GraphError("graph reused after backward");
    if (loss.graph != this) throw GraphError("loss belongs to a different graph");
    if (value(loss).size() != 1) {
      throw GraphError("backward requires a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    consumed_ = true;
    grad_buffer(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    if (!write_) return;
    write_->zero_grad();
    for (const auto& [pidx, nid] : param_nodes_) {
      const Tensor& g = nodes_[nid].grad;
      if (!g.empty()) write_->entry(pidx).grad = g;
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // deque: value() references survive later pushes
  const ParamStore* read_ = nullptr;
  ParamStore* write_ = nullptr;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw GraphError("operands live on different graphs");
  return *a.graph;
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

// (m x k)·(k x n) -> (m x n), or (m x k)·(k) -> (m).
inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1);
  const std::size_t n = B.rank() == 2 ? B.dim(1) : 1;
  Tensor out(B.rank() == 2 ? Shape{m, n} : Shape{m});
  auto o = out.data();
  auto ad = A.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += aip * bd[p * n + j];
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return g.push(std::move(out), [ia, ib, m, k, n](Graph& gr, std::size_t self) {
    const auto G = gr.upstream(self).data();
    {
      // grad_a = G · b^T
      const auto bd = gr.value(Var{&gr, ib}).data();
      auto ga = gr.grad_buffer(ia).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * bd[p * n + j];
          ga[i * k + p] += s;
        }
    }
    {
      // grad_b = a^T · G
      const auto ad = gr.value(Var{&gr, ia}).data();
      auto gb = gr.grad_buffer(ib).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ad[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * G[i * n + j];
        }
    }
  }, "matmul");
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str(A.shape()));
  const std::size_t r = A.dim(0), c = A.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = A.at(i, j);
  const std::size_t ia = a.id;
  return a.graph->push(std::move(out), [ia, r, c](Graph& gr, std::size_t self) {
    const Tensor& G = gr.upstream(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += G.at(j, i);
  }, "transpose");
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) {
    throw DimensionError("add shape mismatch: " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  Tensor out = A;
  detail::accumulate(out, B);
  const std::size_t ia = a.id, ib = b.id;
  return g.push(std::move(out), [ia, ib](Graph& gr, std::size_t self) {
    const Tensor& G = gr.upstream(self);
    detail::accumulate(gr.grad_buffer(ia), G);
    detail::accumulate(gr.grad_buffer(ib), G);
  }, "add");
}

// Left-to-right sum of same-shaped operands.
inline Var add_n(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("add_n of an empty list");
  Var acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& x : out.raw()) x *= c;
  const std::size_t ia = a.id;
  return a.graph->push(std::move(out), [ia, c](Graph& gr, std::size_t self) {
    const auto G = gr.upstream(self).data();
    auto ga = gr.grad_buffer(ia).data();
    for (std::size_t i = 0; i < G.size(); ++i) ga[i] += c * G[i];
  }, "scale");
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const std::size_t ia = a.id;
  return a.graph->push(Tensor::scalar(s), [ia](Graph& gr, std::size_t self) {
    const double G = gr.upstream(self)[0];
    for (double& x : gr.grad_buffer(ia).raw()) x += G;
  }, "sum");
}

// Vector concatenation [a || b || ...].
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of an empty part list");
  Graph& g = *parts.front().graph;
  std::vector<double> out;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.graph != &g) throw GraphError("concat operands live on different graphs");
    const Tensor& t = p.value();
    if (t.rank() != 1) throw DimensionError("concat expects vectors, got " + shape_str(t.shape()));
    ids.push_back(p.id);
    offsets.push_back(out.size());
    out.insert(out.end(), t.raw().begin(), t.raw().end());
  }
  return g.push(Tensor::vector(std::move(out)), [ids, offsets](Graph& gr, std::size_t self) {
    const auto G = gr.upstream(self).data();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto gp = gr.grad_buffer(ids[k]).data();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += G[offsets[k] + i];
    }
  }, "concat");
}

// Stacks equal-length vectors as the rows of a matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of an empty list");
  const std::size_t n = rows.front().size();
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.size() != n) {
      throw DimensionError("stack_rows expects equal-length vectors, got " + shape_str(r.shape()));
    }
  }
  Var flat = concat(rows);
  Tensor out({rows.size(), n}, flat.value().raw());
  const std::size_t iflat = flat.id;
  return flat.graph->push(std::move(out), [iflat](Graph& gr, std::size_t self) {
    detail::accumulate(gr.grad_buffer(iflat), gr.upstream(self));
  }, "stack_rows");
}

// Row-major reshape; with a rank-1 target this is vec() stacking rows.
inline Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.value().raw());
  const std::size_t ia = a.id;
  return a.graph->push(std::move(out), [ia](Graph& gr, std::size_t self) {
    auto ga = gr.grad_buffer(ia).data();
    const auto G = gr.upstream(self).data();
    for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
  }, "reshape");
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.raw()) x = x > 0.0 ? x : 0.0;
  const std::size_t ia = a.id;
  return a.graph->push(std::move(out), [ia](Graph& gr, std::size_t self) {
    const auto X = gr.value(Var{&gr, ia}).data();
    const auto G = gr.upstream(self).data();
    auto ga = gr.grad_buffer(ia).data();
    for (std::size_t i = 0; i < G.size(); ++i)
      if (X[i] > 0.0) ga[i] += G[i];
  }, "relu");
}

// Plain-value softmax over the last axis with row-max subtraction.
inline Tensor softmax_values(const Tensor& z) {
  Tensor out = z;
  const std::size_t n = z.shape().back();
  const std::size_t rows = z.size() / n;
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = o[r * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, o[r * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[r * n + j] = std::exp(o[r * n + j] - mx);
      s += o[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] /= s;
  }
  return out;
}

inline Var softmax(Var z) {
  Tensor out = softmax_values(z.value());
  const std::size_t n = out.shape().back();
  const std::size_t iz = z.id;
  // Row-wise Jacobian-vector product: dz = y * (G - <G, y>).
  return z.graph->push(std::move(out), [iz, n](Graph& gr, std::size_t self) {
    const auto Y = gr.value(Var{&gr, self}).data();
    const auto G = gr.upstream(self).data();
    auto gz = gr.grad_buffer(iz).data();
    const std::size_t rows = Y.size() / n;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += G[r * n + j] * Y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gz[r * n + j] += Y[r * n + j] * (G[r * n + j] - dot);
    }
  }, "softmax");
}

inline void check_class_index(std::size_t y, std::size_t n) {
  if (y >= n) {
    throw DimensionError("class index " + std::to_string(y) + " out of range for " + std::to_string(n) + " classes");
  }
}

// -log softmax(z)[y], with gradient softmax(z) - onehot(y).
inline Var softmax_cross_entropy(Var logits, std::size_t y) {
  const Tensor& z = logits.value();
  if (z.rank() != 1) throw DimensionError("softmax_cross_entropy expects a logit vector");
  check_class_index(y, z.size());
  double mx = z[0];
  for (double v : z.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z.data()) s += std::exp(v - mx);
  const double loss = std::log(s) - (z[y] - mx);
  const std::size_t iz = logits.id;
  return logits.graph->push(Tensor::scalar(loss), [iz, y](Graph& gr, std::size_t self) {
    const double G = gr.upstream(self)[0];
    Tensor p = softmax_values(gr.value(Var{&gr, iz}));
    p[y] -= 1.0;
    auto gz = gr.grad_buffer(iz).data();
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += G * p[i];
  }, "softmax_cross_entropy");
}

inline constexpr double kLogFloor = 1e-300;
inline constexpr double kSimplexTol = 1e-9;

// -log P[y] for a probability vector that did not come straight from a
// softmax (e.g. a fused posterior). P[y] == 0 is rejected; smaller positive
// values are clamped at kLogFloor.
inline Var cross_entropy(Var probs, std::size_t y) {
  const Tensor& P = probs.value();
  if (P.rank() != 1) throw DimensionError("cross_entropy expects a probability vector");
  check_class_index(y, P.size());
  double total = 0.0;
  for (double v : P.data()) {
    if (v < -kSimplexTol) throw NumericError("cross_entropy: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > kSimplexTol) {
    throw NumericError("cross_entropy: probabilities sum to " + std::to_string(total));
  }
  if (P[y] <= 0.0) throw NumericError("cross_entropy: degenerate probability P[y] == 0");
  const double py = std::max(P[y], kLogFloor);
  const std::size_t ip = probs.id;
  return probs.graph->push(Tensor::scalar(-std::log(py)), [ip, y, py](Graph& gr, std::size_t self) {
    const double G = gr.upstream(self)[0];
    gr.grad_buffer(ip)[y] += -G / py;
  }, "cross_entropy");
}

// sum_k w[k] * parts[k] for a weight vector w of length K.
inline Var weighted_sum(Var weights, const std::vector<Var>& parts) {
  const Tensor& W = weights.value();
  if (W.rank() != 1 || W.size() != parts.size() || parts.empty()) {
    throw DimensionError("weighted_sum: " + std::to_string(W.size()) + " weights for " +
                         std::to_string(parts.size()) + " parts");
  }
  Graph& g = *weights.graph;
  const Shape& shape = parts.front().shape();
  std::vector<std::size_t> ids;
  Tensor out(shape);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].graph != &g) throw GraphError("weighted_sum operands live on different graphs");
    if (parts[k].shape() != shape) {
      throw DimensionError("weighted_sum part shape " + shape_str(parts[k].shape()) + " vs " + shape_str(shape));
    }
    ids.push_back(parts[k].id);
  }
  // Per element, accumulate over parts in order so the result is a fixed
  // left-to-right sum.
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < parts.size(); ++k) s += W[k] * parts[k].value()[i];
    out[i] = s;
  }
  const std::size_t iw = weights.id;
  return g.push(std::move(out), [iw, ids](Graph& gr, std::size_t self) {
    const auto G = gr.upstream(self).data();
    const Tensor W = gr.value(Var{&gr, iw});
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto P = gr.value(Var{&gr, ids[k]}).data();
      double dw = 0.0;
      for (std::size_t i = 0; i < G.size(); ++i) dw += G[i] * P[i];
      gr.grad_buffer(iw)[k] += dw;
      auto gp = gr.grad_buffer(ids[k]).data();
      for (std::size_t i = 0; i < G.size(); ++i) gp[i] += W[k] * G[i];
    }
  }, "weighted_sum");
}

// W·x + b.
inline Var linear(Var W, Var x, Var b) { return add(matmul(W, x), b); }

// Central differences of a scalar function of the parameter store, one
// coordinate at a time. The store is restored exactly after each probe.
inline std::vector<Tensor> finite_diff_gradient(const std::function<double(ParamStore&)>& f, ParamStore& store,
                                                double h = 1e-6) {
  if (!(h > 0.0)) throw NumericError("finite difference step must be positive");
  std::vector<Tensor> grads;
  grads.reserve(store.size());
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor g(store.entry(p).value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& theta = store.entry(p).value[i];
      const double saved = theta;
      theta = saved + h;
      const double fp = f(store);
      theta = saved - h;
      const double fm = f(store);
      theta = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("non-finite objective while differencing '" + store.entry(p).name + "'");
      }
      g[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace jiadf
