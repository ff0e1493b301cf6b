#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "clfd/kernels.hpp"
#include "clfd/tensor.hpp"

namespace clfd {

using NodeId = std::size_t;

// Reverse-mode tape. Ops are recorded in construction order, which is a
// topological order, so backward() is a single reverse sweep. The graph is
// released after backward; a second backward is an error.
template <class S>
class Graph {
 public:
  NodeId input(Tensor<S> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor<S>& value(NodeId id) const { return nodes_.at(id).value; }

  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  // Gradient of the last backward() target w.r.t. node id. Zero tensor if
  // the loss did not depend on it.
  Tensor<S> grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    check(ran_backward_, ErrorCategory::internal,
          "grad: backward() has not been run");
    if (n.grad.numel() == 0) return Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  void backward(NodeId loss) {
    check(!released_, ErrorCategory::data,
          "backward: graph already released by a previous backward");
    check(nodes_.at(loss).value.numel() == 1, ErrorCategory::data,
          "backward: loss must be scalar, got shape ",
          shape_str(nodes_.at(loss).value.shape));
    accum(loss, Tensor<S>::full(nodes_[loss].value.shape, S(1)));
    for (std::size_t i = loss + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.numel() == 0 || !n.requires_grad || !n.backward) continue;
      n.backward(*this, i);
      n.backward = nullptr;  // release op closures as we go
    }
    released_ = true;
    ran_backward_ = true;
  }

  // ---- ops ----

  NodeId relu(NodeId x) {
    Tensor<S> y = kernels::relu_forward(value(x));
    return record({x}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      Tensor<S> dx(g.value(x).shape);
      const auto& xv = g.value(x).data;
      // subgradient at 0 is 0
      for (std::size_t i = 0; i < dx.numel(); ++i)
        dx.data[i] = xv[i] > S(0) ? n.grad.data[i] : S(0);
      g.accum(x, std::move(dx));
    });
  }

  NodeId tanh_(NodeId x) {
    Tensor<S> y = kernels::tanh_forward(value(x));
    return record({x}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      Tensor<S> dx(g.value(x).shape);
      for (std::size_t i = 0; i < dx.numel(); ++i) {
        const S yv = n.value.data[i];
        dx.data[i] = n.grad.data[i] * (S(1) - yv * yv);
      }
      g.accum(x, std::move(dx));
    });
  }

  NodeId linear(NodeId x, NodeId w, NodeId b) {
    Tensor<S> y = kernels::linear_forward(value(x), value(w), value(b));
    return record({x, w, b}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0], w = n.parents[1], b = n.parents[2];
      Tensor<S> dx, dw, db;
      const bool nx = g.requires_grad(x), nw = g.requires_grad(w),
                 nb = g.requires_grad(b);
      if (nx) dx = Tensor<S>::zeros(g.value(x).shape);
      if (nw) dw = Tensor<S>::zeros(g.value(w).shape);
      if (nb) db = Tensor<S>::zeros(g.value(b).shape);
      kernels::linear_backward(n.grad, g.value(x), g.value(w),
                               nx ? &dx : nullptr, nw ? &dw : nullptr,
                               nb ? &db : nullptr);
      if (nx) g.accum(x, std::move(dx));
      if (nw) g.accum(w, std::move(dw));
      if (nb) g.accum(b, std::move(db));
    });
  }

  NodeId conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride,
                std::size_t padding) {
    const auto dims = kernels::conv2d_dims(value(x).shape, value(w).shape,
                                           value(b).shape, stride, padding);
    auto col = std::make_shared<std::vector<S>>();
    Tensor<S> y = kernels::conv2d_forward(value(x), value(w), value(b), dims, *col);
    return record({x, w, b}, std::move(y), [dims, col](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0], w = n.parents[1], b = n.parents[2];
      Tensor<S> dx, dw, db;
      const bool nx = g.requires_grad(x), nw = g.requires_grad(w),
                 nb = g.requires_grad(b);
      if (nx) dx = Tensor<S>::zeros(g.value(x).shape);
      if (nw) dw = Tensor<S>::zeros(g.value(w).shape);
      if (nb) db = Tensor<S>::zeros(g.value(b).shape);
      kernels::conv2d_backward(n.grad, *col, g.value(w), dims,
                               nx ? &dx : nullptr, nw ? &dw : nullptr,
                               nb ? &db : nullptr);
      if (nx) g.accum(x, std::move(dx));
      if (nw) g.accum(w, std::move(dw));
      if (nb) g.accum(b, std::move(db));
    });
  }

  NodeId global_avg_pool(NodeId x) {
    Tensor<S> y = kernels::global_avg_pool_forward(value(x));
    return record({x}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      const Shape& xs = g.value(x).shape;
      const std::size_t ch = xs[1], hw = xs[2] * xs[3];
      Tensor<S> dx(xs);
      for (std::size_t b = 0; b < xs[0]; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
          const S gval = n.grad.data[b * ch + c] / static_cast<S>(hw);
          S* p = dx.data.data() + (b * ch + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) p[i] = gval;
        }
      g.accum(x, std::move(dx));
    });
  }

  // Mean of all elements -> scalar.
  NodeId batch_mean(NodeId x) {
    const Tensor<S>& xv = value(x);
    check(xv.numel() > 0, ErrorCategory::data, "batch_mean: empty input");
    S acc = 0;
    for (S v : xv.data) acc += v;
    Tensor<S> y = Tensor<S>::scalar(acc / static_cast<S>(xv.numel()));
    return record({x}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      const std::size_t m = g.value(x).numel();
      g.accum(x, Tensor<S>::full(g.value(x).shape,
                                 n.grad.data[0] / static_cast<S>(m)));
    });
  }

  NodeId sum(NodeId x) {
    const Tensor<S>& xv = value(x);
    S acc = 0;
    for (S v : xv.data) acc += v;
    return record({x}, Tensor<S>::scalar(acc), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      g.accum(x, Tensor<S>::full(g.value(x).shape, n.grad.data[0]));
    });
  }

  // [B,D] -> [B]
  NodeId sum_rows(NodeId x) {
    const Tensor<S>& xv = value(x);
    check(xv.rank() == 2, ErrorCategory::data,
          "sum_rows: input must be rank 2, got ", shape_str(xv.shape));
    Tensor<S> y(Shape{xv.shape[0]});
    for (std::size_t b = 0; b < xv.shape[0]; ++b) {
      S acc = 0;
      const S* p = xv.data.data() + b * xv.shape[1];
      for (std::size_t i = 0; i < xv.shape[1]; ++i) acc += p[i];
      y.data[b] = acc;
    }
    return record({x}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      const Shape& xs = g.value(x).shape;
      Tensor<S> dx(xs);
      for (std::size_t b = 0; b < xs[0]; ++b) {
        S* p = dx.data.data() + b * xs[1];
        for (std::size_t i = 0; i < xs[1]; ++i) p[i] = n.grad.data[b];
      }
      g.accum(x, std::move(dx));
    });
  }

  NodeId l2_normalize(NodeId x) {
    auto norms = std::make_shared<std::vector<S>>();
    Tensor<S> y = kernels::l2_normalize_forward(value(x), norms.get());
    return record({x}, std::move(y), [norms](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      const Shape& xs = g.value(x).shape;
      const std::size_t dim = xs[1];
      Tensor<S> dx(xs);
      for (std::size_t b = 0; b < xs[0]; ++b) {
        const S* dy = n.grad.data.data() + b * dim;
        const S* yv = n.value.data.data() + b * dim;
        S dot = 0;
        for (std::size_t i = 0; i < dim; ++i) dot += dy[i] * yv[i];
        S* out = dx.data.data() + b * dim;
        const S inv = S(1) / (*norms)[b];
        for (std::size_t i = 0; i < dim; ++i) out[i] = (dy[i] - dot * yv[i]) * inv;
      }
      g.accum(x, std::move(dx));
    });
  }

  NodeId matmul_nt(NodeId a, NodeId b) {
    Tensor<S> y = kernels::matmul_nt_forward(value(a), value(b));
    return record({a, b}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId a = n.parents[0], b = n.parents[1];
      const auto& av = g.value(a);
      const auto& bv = g.value(b);
      const std::size_t m = av.shape[0], k = av.shape[1], nn = bv.shape[0];
      kernels::CMapM<S> dc(n.grad.data.data(), m, nn);
      if (g.requires_grad(a)) {
        Tensor<S> da = Tensor<S>::zeros(av.shape);
        kernels::MapM<S> dam(da.data.data(), m, k);
        kernels::CMapM<S> bm(bv.data.data(), nn, k);
        dam.noalias() = dc * bm;
        g.accum(a, std::move(da));
      }
      if (g.requires_grad(b)) {
        Tensor<S> db = Tensor<S>::zeros(bv.shape);
        kernels::MapM<S> dbm(db.data.data(), nn, k);
        kernels::CMapM<S> am(av.data.data(), m, k);
        dbm.noalias() = dc.transpose() * am;
        g.accum(b, std::move(db));
      }
    });
  }

  NodeId scale(NodeId x, S c) {
    Tensor<S> y = value(x);
    for (auto& v : y.data) v *= c;
    return record({x}, std::move(y), [c](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      Tensor<S> dx = n.grad;
      for (auto& v : dx.data) v *= c;
      g.accum(x, std::move(dx));
    });
  }

  NodeId add_scalar(NodeId x, S c) {
    Tensor<S> y = value(x);
    for (auto& v : y.data) v += c;
    return record({x}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (g.requires_grad(x)) g.accum(x, n.grad);
    });
  }

  NodeId add(NodeId a, NodeId b) { return binary_elementwise(a, b, Binary::add); }
  NodeId sub(NodeId a, NodeId b) { return binary_elementwise(a, b, Binary::sub); }
  NodeId mul(NodeId a, NodeId b) { return binary_elementwise(a, b, Binary::mul); }

  // [B,Da] ++ [B,Db] -> [B,Da+Db]
  NodeId concat_cols(NodeId a, NodeId b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    check(av.rank() == 2 && bv.rank() == 2 && av.shape[0] == bv.shape[0],
          ErrorCategory::data, "concat_cols: need matching row counts, got ",
          shape_str(av.shape), " and ", shape_str(bv.shape));
    const std::size_t rows = av.shape[0], da = av.shape[1], db = bv.shape[1];
    Tensor<S> y(Shape{rows, da + db});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(av.data.data() + r * da, da, y.data.data() + r * (da + db));
      std::copy_n(bv.data.data() + r * db, db, y.data.data() + r * (da + db) + da);
    }
    return record({a, b}, std::move(y), [](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId a = n.parents[0], b = n.parents[1];
      const std::size_t rows = g.value(a).shape[0];
      const std::size_t da = g.value(a).shape[1], db = g.value(b).shape[1];
      if (g.requires_grad(a)) {
        Tensor<S> dd(g.value(a).shape);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(n.grad.data.data() + r * (da + db), da,
                      dd.data.data() + r * da);
        g.accum(a, std::move(dd));
      }
      if (g.requires_grad(b)) {
        Tensor<S> dd(g.value(b).shape);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(n.grad.data.data() + r * (da + db) + da, db,
                      dd.data.data() + r * db);
        g.accum(b, std::move(dd));
      }
    });
  }

  // y[r, :] = x[idx[r], :]
  NodeId gather_rows(NodeId x, std::vector<std::size_t> idx) {
    const auto& xv = value(x);
    check(xv.rank() == 2, ErrorCategory::data,
          "gather_rows: input must be rank 2, got ", shape_str(xv.shape));
    const std::size_t cols = xv.shape[1];
    Tensor<S> y(Shape{idx.size(), cols});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      check(idx[r] < xv.shape[0], ErrorCategory::data,
            "gather_rows: index ", idx[r], " out of range for ", xv.shape[0],
            " rows");
      std::copy_n(xv.data.data() + idx[r] * cols, cols,
                  y.data.data() + r * cols);
    }
    auto idx_ptr = std::make_shared<std::vector<std::size_t>>(std::move(idx));
    return record({x}, std::move(y), [idx_ptr](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      const std::size_t cols = g.value(x).shape[1];
      Tensor<S> dx = Tensor<S>::zeros(g.value(x).shape);
      for (std::size_t r = 0; r < idx_ptr->size(); ++r) {
        const S* src = n.grad.data.data() + r * cols;
        S* dst = dx.data.data() + (*idx_ptr)[r] * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
      g.accum(x, std::move(dx));
    });
  }

  // y[r] = x[r, idx[r]]
  NodeId gather_cols(NodeId x, std::vector<std::size_t> idx) {
    const auto& xv = value(x);
    check(xv.rank() == 2, ErrorCategory::data,
          "gather_cols: input must be rank 2, got ", shape_str(xv.shape));
    check(idx.size() == xv.shape[0], ErrorCategory::data,
          "gather_cols: index count ", idx.size(), " != rows ", xv.shape[0]);
    Tensor<S> y(Shape{xv.shape[0]});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      check(idx[r] < xv.shape[1], ErrorCategory::data,
            "gather_cols: index ", idx[r], " out of range for row width ",
            xv.shape[1]);
      y.data[r] = xv.data[r * xv.shape[1] + idx[r]];
    }
    auto idx_ptr = std::make_shared<std::vector<std::size_t>>(std::move(idx));
    return record({x}, std::move(y), [idx_ptr](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      Tensor<S> dx = Tensor<S>::zeros(g.value(x).shape);
      const std::size_t cols = g.value(x).shape[1];
      for (std::size_t r = 0; r < idx_ptr->size(); ++r)
        dx.data[r * cols + (*idx_ptr)[r]] += n.grad.data[r];
      g.accum(x, std::move(dx));
    });
  }

  NodeId row_logsumexp(NodeId x, bool exclude_diag) {
    Tensor<S> y = kernels::row_logsumexp_forward(value(x), exclude_diag);
    return record({x}, std::move(y), [exclude_diag](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId x = n.parents[0];
      if (!g.requires_grad(x)) return;
      const auto& xv = g.value(x);
      const std::size_t rows = xv.shape[0], cols = xv.shape[1];
      Tensor<S> dx(xv.shape);
      for (std::size_t r = 0; r < rows; ++r) {
        const S lse = n.value.data[r];
        const S gv = n.grad.data[r];
        for (std::size_t k = 0; k < cols; ++k) {
          if (exclude_diag && k == r) continue;
          dx.data[r * cols + k] = gv * std::exp(xv.data[r * cols + k] - lse);
        }
      }
      g.accum(x, std::move(dx));
    });
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // empty until touched by backward
    bool requires_grad = false;
    std::vector<NodeId> parents;
    std::function<void(Graph&, NodeId)> backward;
  };

  enum class Binary { add, sub, mul };

  NodeId binary_elementwise(NodeId a, NodeId b, Binary op) {
    const auto& av = value(a);
    const auto& bv = value(b);
    const char* name = op == Binary::add ? "add" : op == Binary::sub ? "sub" : "mul";
    check(av.shape == bv.shape, ErrorCategory::data, name,
          ": shape mismatch ", shape_str(av.shape), " vs ", shape_str(bv.shape));
    Tensor<S> y(av.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      switch (op) {
        case Binary::add: y.data[i] = av.data[i] + bv.data[i]; break;
        case Binary::sub: y.data[i] = av.data[i] - bv.data[i]; break;
        case Binary::mul: y.data[i] = av.data[i] * bv.data[i]; break;
      }
    }
    return record({a, b}, std::move(y), [op](Graph& g, NodeId self) {
      const Node& n = g.nodes_[self];
      NodeId a = n.parents[0], b = n.parents[1];
      if (g.requires_grad(a)) {
        Tensor<S> da = n.grad;
        if (op == Binary::mul)
          for (std::size_t i = 0; i < da.numel(); ++i) da.data[i] *= g.value(b).data[i];
        g.accum(a, std::move(da));
      }
      if (g.requires_grad(b)) {
        Tensor<S> db = n.grad;
        if (op == Binary::mul)
          for (std::size_t i = 0; i < db.numel(); ++i) db.data[i] *= g.value(a).data[i];
        else if (op == Binary::sub)
          for (auto& v : db.data) v = -v;
        g.accum(b, std::move(db));
      }
    });
  }

  NodeId record(std::vector<NodeId> parents, Tensor<S> value,
                std::function<void(Graph&, NodeId)> backward) {
    check(!released_, ErrorCategory::data,
          "graph: cannot record ops after backward()");
    Node n;
    n.value = std::move(value);
    for (NodeId p : parents)
      if (nodes_.at(p).requires_grad) n.requires_grad = true;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void accum(NodeId id, Tensor<S> g) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) {
      n.grad = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < n.grad.numel(); ++i) n.grad.data[i] += g.data[i];
  }

  std::vector<Node> nodes_;
  bool released_ = false;
  bool ran_backward_ = false;
};

}  // namespace clfd
