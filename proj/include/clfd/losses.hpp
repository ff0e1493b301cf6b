#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "clfd/autodiff.hpp"
#include "clfd/kernels.hpp"
#include "clfd/tensor.hpp"

namespace clfd {

// Contrastive batches are interleaved: row 2k is the anchor of pair k and
// row 2k+1 its positive (0-based). Each directed loss pairs a row with its
// neighbor.
inline std::size_t partner_index(std::size_t i) { return i ^ 1u; }

template <class S>
S cosine_sim(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.rank() == 1 && b.rank() == 1 && a.shape == b.shape,
        ErrorCategory::data, "cosine_sim: need equal-length vectors, got ",
        shape_str(a.shape), " and ", shape_str(b.shape));
  S dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    dot += a.data[i] * b.data[i];
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
  }
  check(na > S(0) && nb > S(0), ErrorCategory::numeric,
        "cosine_sim: zero-norm input vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {
template <class S>
void check_tau(S tau) {
  check(tau > S(0), ErrorCategory::config, "nt_xent: tau must be > 0, got ", tau);
}
}  // namespace detail

// Directed NT-Xent loss for anchor index a and positive index p among the
// rows of z ([M, D], M >= 2):
//   l(a, p) = -log( exp(sim(z_a, z_p)/tau) / sum_{k != a} exp(sim(z_a, z_k)/tau) )
// The denominator is stabilized by subtracting the row maximum.
template <class S>
S nt_xent_pair(const Tensor<S>& z, std::size_t a, std::size_t p, S tau) {
  detail::check_tau(tau);
  check(z.rank() == 2 && z.shape[0] >= 2, ErrorCategory::data,
        "nt_xent_pair: z must be [M,D] with M >= 2, got ", shape_str(z.shape));
  const std::size_t m = z.shape[0], d = z.shape[1];
  check(a < m && p < m && a != p, ErrorCategory::data,
        "nt_xent_pair: invalid indices a=", a, " p=", p, " for M=", m);
  auto row = [&](std::size_t r) {
    return Tensor<S>(Shape{d},
                     std::vector<S>(z.data.begin() + r * d,
                                    z.data.begin() + (r + 1) * d));
  };
  const Tensor<S> za = row(a);
  std::vector<S> logits;
  logits.reserve(m - 1);
  S pos_logit = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (k == a) continue;
    const S s = cosine_sim(za, row(k)) / tau;
    logits.push_back(s);
    if (k == p) pos_logit = s;
  }
  S mx = logits[0];
  for (S v : logits) mx = std::max(mx, v);
  S acc = 0;
  for (S v : logits) acc += std::exp(v - mx);
  return (mx + std::log(acc)) - pos_logit;
}

namespace detail {
template <class S>
void check_layout(const Tensor<S>& z) {
  check(z.rank() == 2, ErrorCategory::data,
        "nt_xent_batch: z must be rank 2, got ", shape_str(z.shape));
  check(z.shape[0] >= 2 && z.shape[0] % 2 == 0, ErrorCategory::data,
        "nt_xent_batch: need an even number (>= 2) of vectors, got ",
        z.shape[0]);
}

inline std::vector<std::size_t> partner_indices(std::size_t rows) {
  std::vector<std::size_t> idx(rows);
  for (std::size_t i = 0; i < rows; ++i) idx[i] = partner_index(i);
  return idx;
}
}  // namespace detail

// Batch NT-Xent over an interleaved layout: mean of the 2N directed losses
// l(2k, 2k+1) and l(2k+1, 2k). Differentiable end-to-end.
template <class S>
NodeId nt_xent_batch_graph(Graph<S>& g, NodeId z, S tau) {
  detail::check_tau(tau);
  detail::check_layout(g.value(z));
  const std::size_t rows = g.value(z).shape[0];
  NodeId zn = g.l2_normalize(z);
  NodeId s = g.matmul_nt(zn, zn);
  NodeId st = g.scale(s, S(1) / tau);
  NodeId lse = g.row_logsumexp(st, /*exclude_diag=*/true);
  NodeId pos = g.gather_cols(st, detail::partner_indices(rows));
  return g.batch_mean(g.sub(lse, pos));
}

// Value-only batch NT-Xent (validation / oracles), same arithmetic as the
// graph path.
template <class S>
S nt_xent_batch_value(const Tensor<S>& z, S tau) {
  detail::check_tau(tau);
  detail::check_layout(z);
  const std::size_t rows = z.shape[0];
  Tensor<S> zn = kernels::l2_normalize_forward(z);
  Tensor<S> st = kernels::matmul_nt_forward(zn, zn);
  for (auto& v : st.data) v /= tau;
  Tensor<S> lse = kernels::row_logsumexp_forward(st, /*exclude_diag=*/true);
  S acc = 0;
  for (std::size_t i = 0; i < rows; ++i)
    acc += lse.data[i] - st.data[i * rows + partner_index(i)];
  return acc / static_cast<S>(rows);
}

// Triplet baseline: max(0, ||a-p||^2 - ||a-n||^2 + margin).
template <class S>
S triplet_loss(const Tensor<S>& a, const Tensor<S>& p, const Tensor<S>& n,
               S margin) {
  check(a.rank() == 1 && a.shape == p.shape && a.shape == n.shape,
        ErrorCategory::data, "triplet_loss: need equal-length vectors");
  check(margin >= S(0), ErrorCategory::config,
        "triplet_loss: margin must be >= 0, got ", margin);
  S dap = 0, dan = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const S vp = a.data[i] - p.data[i];
    const S vn = a.data[i] - n.data[i];
    dap += vp * vp;
    dan += vn * vn;
  }
  return std::max(S(0), dap - dan + margin);
}

// Mean triplet loss over row-aligned batches [N,D].
template <class S>
NodeId triplet_batch_graph(Graph<S>& g, NodeId anchors, NodeId positives,
                           NodeId negatives, S margin) {
  check(margin >= S(0), ErrorCategory::config,
        "triplet_loss: margin must be >= 0, got ", margin);
  const auto& av = g.value(anchors);
  check(av.rank() == 2 && av.shape == g.value(positives).shape &&
            av.shape == g.value(negatives).shape,
        ErrorCategory::data, "triplet_batch: need matching [N,D] inputs");
  NodeId dap = g.sub(anchors, positives);
  NodeId dan = g.sub(anchors, negatives);
  NodeId sap = g.sum_rows(g.mul(dap, dap));
  NodeId san = g.sum_rows(g.mul(dan, dan));
  NodeId hinge = g.relu(g.add_scalar(g.sub(sap, san), margin));
  return g.batch_mean(hinge);
}

}  // namespace clfd
