#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "clfd/tensor.hpp"

// Forward/backward kernels for every differentiable op. The graph in
// autodiff.hpp and the no-grad paths in models.hpp both call these, so each
// op has a single numeric definition.

namespace clfd::kernels {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapM = Eigen::Map<const MatRM<S>>;

struct Conv2dDims {
  std::size_t batch, in_ch, in_h, in_w;
  std::size_t out_ch, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;
};

inline Conv2dDims conv2d_dims(const Shape& x, const Shape& w, const Shape& b,
                              std::size_t stride, std::size_t padding) {
  check(x.size() == 4, ErrorCategory::data,
        "conv2d: input must be rank 4 [B,C,H,W], got ", shape_str(x));
  check(w.size() == 4, ErrorCategory::data,
        "conv2d: weight must be rank 4 [F,C,kh,kw], got ", shape_str(w));
  check(b.size() == 1 && b[0] == w[0], ErrorCategory::data,
        "conv2d: bias must be [F]=", w[0], ", got ", shape_str(b));
  check(x[1] == w[1], ErrorCategory::data, "conv2d: input channels ", x[1],
        " do not match weight channels ", w[1]);
  check(stride >= 1, ErrorCategory::data, "conv2d: stride must be >= 1");
  Conv2dDims d{};
  d.batch = x[0];
  d.in_ch = x[1];
  d.in_h = x[2];
  d.in_w = x[3];
  d.out_ch = w[0];
  d.kh = w[2];
  d.kw = w[3];
  d.stride = stride;
  d.padding = padding;
  check(d.in_h + 2 * padding >= d.kh && d.in_w + 2 * padding >= d.kw,
        ErrorCategory::data, "conv2d: kernel ", d.kh, "x", d.kw,
        " larger than padded input ", d.in_h + 2 * padding, "x",
        d.in_w + 2 * padding);
  d.out_h = (d.in_h + 2 * padding - d.kh) / stride + 1;
  d.out_w = (d.in_w + 2 * padding - d.kw) / stride + 1;
  return d;
}

// col layout: [C*kh*kw, B*out_h*out_w]
template <class S>
void im2col(const Tensor<S>& x, const Conv2dDims& d, std::vector<S>& col) {
  const std::size_t patches = d.batch * d.out_h * d.out_w;
  col.assign(d.in_ch * d.kh * d.kw * patches, S(0));
  const std::size_t hw = d.in_h * d.in_w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.in_ch; ++c) {
      const S* xp = x.data.data() + (b * d.in_ch + c) * hw;
      for (std::size_t ki = 0; ki < d.kh; ++ki) {
        for (std::size_t kj = 0; kj < d.kw; ++kj) {
          S* row = col.data() + ((c * d.kh + ki) * d.kw + kj) * patches +
                   b * d.out_h * d.out_w;
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                static_cast<std::ptrdiff_t>(d.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
            for (std::size_t ox = 0; ox < d.out_w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                  static_cast<std::ptrdiff_t>(d.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.in_w)) continue;
              row[oy * d.out_w + ox] = xp[iy * d.in_w + ix];
            }
          }
        }
      }
    }
  }
}

template <class S>
void col2im_accumulate(const std::vector<S>& col, const Conv2dDims& d,
                       Tensor<S>& dx) {
  const std::size_t patches = d.batch * d.out_h * d.out_w;
  const std::size_t hw = d.in_h * d.in_w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.in_ch; ++c) {
      S* xp = dx.data.data() + (b * d.in_ch + c) * hw;
      for (std::size_t ki = 0; ki < d.kh; ++ki) {
        for (std::size_t kj = 0; kj < d.kw; ++kj) {
          const S* row = col.data() + ((c * d.kh + ki) * d.kw + kj) * patches +
                         b * d.out_h * d.out_w;
          for (std::size_t oy = 0; oy < d.out_h; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * d.stride + ki) -
                static_cast<std::ptrdiff_t>(d.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
            for (std::size_t ox = 0; ox < d.out_w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * d.stride + kj) -
                  static_cast<std::ptrdiff_t>(d.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.in_w)) continue;
              xp[iy * d.in_w + ix] += row[oy * d.out_w + ox];
            }
          }
        }
      }
    }
  }
}

// out layout [B,F,Ho,Wo]; gemm result is [F, B*Ho*Wo], so rows are scattered
// per image.
template <class S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w,
                         const Tensor<S>& b, const Conv2dDims& d,
                         std::vector<S>& col_cache) {
  im2col(x, d, col_cache);
  const std::size_t patches = d.batch * d.out_h * d.out_w;
  const std::size_t ckk = d.in_ch * d.kh * d.kw;
  std::vector<S> y_mat(d.out_ch * patches);
  {
    CMapM<S> wm(w.data.data(), d.out_ch, ckk);
    CMapM<S> cm(col_cache.data(), ckk, patches);
    MapM<S> ym(y_mat.data(), d.out_ch, patches);
    ym.noalias() = wm * cm;
  }
  Tensor<S> out(Shape{d.batch, d.out_ch, d.out_h, d.out_w});
  const std::size_t ohw = d.out_h * d.out_w;
  for (std::size_t bi = 0; bi < d.batch; ++bi) {
    for (std::size_t f = 0; f < d.out_ch; ++f) {
      const S* src = y_mat.data() + f * patches + bi * ohw;
      S* dst = out.data.data() + (bi * d.out_ch + f) * ohw;
      const S bias = b.data[f];
      for (std::size_t i = 0; i < ohw; ++i) dst[i] = src[i] + bias;
    }
  }
  return out;
}

template <class S>
void conv2d_backward(const Tensor<S>& dy, const std::vector<S>& col,
                     const Tensor<S>& w, const Conv2dDims& d, Tensor<S>* dx,
                     Tensor<S>* dw, Tensor<S>* db) {
  const std::size_t patches = d.batch * d.out_h * d.out_w;
  const std::size_t ckk = d.in_ch * d.kh * d.kw;
  const std::size_t ohw = d.out_h * d.out_w;
  // regather dy into [F, B*Ho*Wo]
  std::vector<S> dy_mat(d.out_ch * patches);
  for (std::size_t bi = 0; bi < d.batch; ++bi) {
    for (std::size_t f = 0; f < d.out_ch; ++f) {
      const S* src = dy.data.data() + (bi * d.out_ch + f) * ohw;
      S* dst = dy_mat.data() + f * patches + bi * ohw;
      for (std::size_t i = 0; i < ohw; ++i) dst[i] = src[i];
    }
  }
  CMapM<S> dym(dy_mat.data(), d.out_ch, patches);
  if (dw) {
    CMapM<S> cm(col.data(), ckk, patches);
    MapM<S> dwm(dw->data.data(), d.out_ch, ckk);
    dwm.noalias() += dym * cm.transpose();
  }
  if (db) {
    for (std::size_t f = 0; f < d.out_ch; ++f) {
      S acc = 0;
      const S* row = dy_mat.data() + f * patches;
      for (std::size_t i = 0; i < patches; ++i) acc += row[i];
      db->data[f] += acc;
    }
  }
  if (dx) {
    std::vector<S> dcol(ckk * patches);
    CMapM<S> wm(w.data.data(), d.out_ch, ckk);
    MapM<S> dcm(dcol.data(), ckk, patches);
    dcm.noalias() = wm.transpose() * dym;
    col2im_accumulate(dcol, d, *dx);
  }
}

// x [B,I] (or [I], treated as one row), w [O,I], b [O] -> [B,O]
template <class S>
Tensor<S> linear_forward(const Tensor<S>& x, const Tensor<S>& w,
                         const Tensor<S>& b) {
  check(x.rank() == 2 || x.rank() == 1, ErrorCategory::data,
        "linear: input must be rank 1 or 2, got ", shape_str(x.shape));
  check(w.rank() == 2, ErrorCategory::data, "linear: weight must be [O,I], got ",
        shape_str(w.shape));
  const std::size_t batch = x.rank() == 2 ? x.shape[0] : 1;
  const std::size_t in = x.rank() == 2 ? x.shape[1] : x.shape[0];
  check(in == w.shape[1], ErrorCategory::data, "linear: input width ", in,
        " does not match weight in-features ", w.shape[1]);
  check(b.rank() == 1 && b.shape[0] == w.shape[0], ErrorCategory::data,
        "linear: bias must be [", w.shape[0], "], got ", shape_str(b.shape));
  const std::size_t out = w.shape[0];
  Tensor<S> y(x.rank() == 2 ? Shape{batch, out} : Shape{out});
  CMapM<S> xm(x.data.data(), batch, in);
  CMapM<S> wm(w.data.data(), out, in);
  MapM<S> ym(y.data.data(), batch, out);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t o = 0; o < out; ++o) y.data[bi * out + o] += b.data[o];
  return y;
}

template <class S>
void linear_backward(const Tensor<S>& dy, const Tensor<S>& x, const Tensor<S>& w,
                     Tensor<S>* dx, Tensor<S>* dw, Tensor<S>* db) {
  const std::size_t batch = x.rank() == 2 ? x.shape[0] : 1;
  const std::size_t in = x.rank() == 2 ? x.shape[1] : x.shape[0];
  const std::size_t out = w.shape[0];
  CMapM<S> dym(dy.data.data(), batch, out);
  if (dx) {
    CMapM<S> wm(w.data.data(), out, in);
    MapM<S> dxm(dx->data.data(), batch, in);
    dxm.noalias() += dym * wm;
  }
  if (dw) {
    CMapM<S> xm(x.data.data(), batch, in);
    MapM<S> dwm(dw->data.data(), out, in);
    dwm.noalias() += dym.transpose() * xm;
  }
  if (db) {
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t o = 0; o < out; ++o) db->data[o] += dy.data[bi * out + o];
  }
}

template <class S>
Tensor<S> relu_forward(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (auto& v : y.data) v = v > S(0) ? v : S(0);
  return y;
}

template <class S>
Tensor<S> tanh_forward(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (auto& v : y.data) v = std::tanh(v);
  return y;
}

template <class S>
Tensor<S> global_avg_pool_forward(const Tensor<S>& x) {
  check(x.rank() == 4, ErrorCategory::data,
        "global_avg_pool: input must be rank 4 [B,C,H,W], got ",
        shape_str(x.shape));
  const std::size_t batch = x.shape[0], ch = x.shape[1];
  const std::size_t hw = x.shape[2] * x.shape[3];
  check(hw > 0, ErrorCategory::data, "global_avg_pool: empty spatial extent");
  Tensor<S> y(Shape{batch, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const S* p = x.data.data() + (b * ch + c) * hw;
      S acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      y.data[b * ch + c] = acc / static_cast<S>(hw);
    }
  return y;
}

// Row-wise x / ||x||. Rows must have nonzero norm.
template <class S>
Tensor<S> l2_normalize_forward(const Tensor<S>& x,
                               std::vector<S>* norms = nullptr) {
  check(x.rank() == 2, ErrorCategory::data,
        "l2_normalize: input must be rank 2 [B,D], got ", shape_str(x.shape));
  const std::size_t batch = x.shape[0], dim = x.shape[1];
  Tensor<S> y(x.shape);
  if (norms) norms->resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const S* p = x.data.data() + b * dim;
    S sq = 0;
    for (std::size_t i = 0; i < dim; ++i) sq += p[i] * p[i];
    const S norm = std::sqrt(sq);
    check(norm > S(0), ErrorCategory::numeric,
          "l2_normalize: row ", b, " has zero norm");
    if (norms) (*norms)[b] = norm;
    S* q = y.data.data() + b * dim;
    for (std::size_t i = 0; i < dim; ++i) q[i] = p[i] / norm;
  }
  return y;
}

// a [M,K] * b^T, b [N,K] -> [M,N]
template <class S>
Tensor<S> matmul_nt_forward(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[1],
        ErrorCategory::data, "matmul_nt: need [M,K] x [N,K], got ",
        shape_str(a.shape), " x ", shape_str(b.shape));
  Tensor<S> c(Shape{a.shape[0], b.shape[0]});
  CMapM<S> am(a.data.data(), a.shape[0], a.shape[1]);
  CMapM<S> bm(b.data.data(), b.shape[0], b.shape[1]);
  MapM<S> cm(c.data.data(), a.shape[0], b.shape[0]);
  cm.noalias() = am * bm.transpose();
  return c;
}

// Row log-sum-exp with optional diagonal exclusion (requires square input).
// Row max is subtracted before exponentiation.
template <class S>
Tensor<S> row_logsumexp_forward(const Tensor<S>& x, bool exclude_diag) {
  check(x.rank() == 2, ErrorCategory::data,
        "row_logsumexp: input must be rank 2, got ", shape_str(x.shape));
  const std::size_t rows = x.shape[0], cols = x.shape[1];
  if (exclude_diag) {
    check(rows == cols, ErrorCategory::data,
          "row_logsumexp: diagonal exclusion needs a square matrix, got ",
          shape_str(x.shape));
    check(cols >= 2, ErrorCategory::data,
          "row_logsumexp: need at least 2 columns to exclude the diagonal");
  } else {
    check(cols >= 1, ErrorCategory::data, "row_logsumexp: empty rows");
  }
  Tensor<S> y(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const S* p = x.data.data() + r * cols;
    S m = -std::numeric_limits<S>::infinity();
    for (std::size_t k = 0; k < cols; ++k) {
      if (exclude_diag && k == r) continue;
      m = std::max(m, p[k]);
    }
    S acc = 0;
    for (std::size_t k = 0; k < cols; ++k) {
      if (exclude_diag && k == r) continue;
      acc += std::exp(p[k] - m);
    }
    y.data[r] = m + std::log(acc);
  }
  return y;
}

}  // namespace clfd::kernels
