#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "clfd/autodiff.hpp"
#include "clfd/losses.hpp"
#include "clfd/rng.hpp"

namespace {

using clfd::Error;
using clfd::Graph;
using clfd::NodeId;
using clfd::Rng;
using clfd::Shape;
using clfd::Tensor;

Tensor<double> rand_tensor(Shape sh, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t(std::move(sh));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Differentiates a weighted sum of the op output w.r.t. the tensor x and
// compares against central finite differences computed by re-running the
// forward pass (an implementation-independent check).
void expect_gradient_matches(
    const Tensor<double>& x0,
    const std::function<NodeId(Graph<double>&, NodeId)>& build,
    double tol = 2e-6) {
  Tensor<double> weights;  // fixed after the first evaluation
  auto eval = [&](const Tensor<double>& x, Tensor<double>* dx) {
    Graph<double> g;
    NodeId xin = g.input(x, dx != nullptr);
    NodeId y = build(g, xin);
    if (weights.numel() == 0) {
      Rng wr = Rng::stream(777, "fd/weights");
      weights = rand_tensor(g.value(y).shape, wr);
    }
    NodeId loss = g.sum(g.mul(y, g.input(weights, false)));
    const double lv = g.value(loss).data[0];
    if (dx) {
      g.backward(loss);
      *dx = g.grad(xin);
    }
    return lv;
  };

  Tensor<double> analytic;
  eval(x0, &analytic);
  ASSERT_EQ(analytic.shape, x0.shape);
  const double h = 1e-6;
  Tensor<double> x = x0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x.data[i];
    x.data[i] = orig + h;
    const double up = eval(x, nullptr);
    x.data[i] = orig - h;
    const double dn = eval(x, nullptr);
    x.data[i] = orig;
    const double numeric = (up - dn) / (2 * h);
    const double a = analytic.data[i];
    const double rel =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    EXPECT_LT(rel, tol) << "coord " << i << ": analytic=" << a
                        << " numeric=" << numeric;
  }
}

TEST(Forward, ReluAndTanh) {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{4}, {-2, -0.5, 0.5, 2}));
  const auto& r = g.value(g.relu(x));
  EXPECT_EQ(r.data, (std::vector<double>{0, 0, 0.5, 2}));
  const auto& t = g.value(g.tanh_(x));
  EXPECT_NEAR(t.data[3], std::tanh(2.0), 1e-15);
  EXPECT_NEAR(t.data[0], std::tanh(-2.0), 1e-15);
}

TEST(Forward, LinearMatchesNaive) {
  Rng rng = Rng::stream(1, "fwd/linear");
  const std::size_t b = 3, din = 4, dout = 5;
  Tensor<double> x = rand_tensor(Shape{b, din}, rng);
  Tensor<double> w = rand_tensor(Shape{dout, din}, rng);
  Tensor<double> bias = rand_tensor(Shape{dout}, rng);
  Graph<double> g;
  const auto& y =
      g.value(g.linear(g.input(x), g.input(w), g.input(bias)));
  ASSERT_EQ(y.shape, (Shape{b, dout}));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = bias.data[o];
      for (std::size_t k = 0; k < din; ++k)
        acc += x.data[i * din + k] * w.data[o * din + k];
      EXPECT_NEAR(y.data[i * dout + o], acc, 1e-12);
    }
}

TEST(Forward, Conv2dMatchesNaiveLoops) {
  Rng rng = Rng::stream(2, "fwd/conv");
  const std::size_t B = 2, Cin = 3, H = 8, W = 8, Cout = 4, K = 3;
  const std::size_t stride = 2, pad = 1;
  Tensor<double> x = rand_tensor(Shape{B, Cin, H, W}, rng);
  Tensor<double> w = rand_tensor(Shape{Cout, Cin, K, K}, rng);
  Tensor<double> bias = rand_tensor(Shape{Cout}, rng);
  Graph<double> g;
  const auto& y = g.value(
      g.conv2d(g.input(x), g.input(w), g.input(bias), stride, pad));
  const std::size_t OH = (H + 2 * pad - K) / stride + 1;
  const std::size_t OW = (W + 2 * pad - K) / stride + 1;
  ASSERT_EQ(y.shape, (Shape{B, Cout, OH, OW}));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double acc = bias.data[co];
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t kh = 0; kh < K; ++kh)
              for (std::size_t kw = 0; kw < K; ++kw) {
                const long ih = long(oh * stride + kh) - long(pad);
                const long iw = long(ow * stride + kw) - long(pad);
                if (ih < 0 || iw < 0 || ih >= long(H) || iw >= long(W))
                  continue;
                acc += x.data[((b * Cin + ci) * H + ih) * W + iw] *
                       w.data[((co * Cin + ci) * K + kh) * K + kw];
              }
          EXPECT_NEAR(y.data[((b * Cout + co) * OH + oh) * OW + ow], acc,
                      1e-11);
        }
}

TEST(Forward, GlobalAvgPool) {
  // [1,2,2,2]: channel means.
  Tensor<double> x(Shape{1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  Graph<double> g;
  const auto& y = g.value(g.global_avg_pool(g.input(x)));
  ASSERT_EQ(y.shape, (Shape{1, 2}));
  EXPECT_NEAR(y.data[0], 2.5, 1e-15);
  EXPECT_NEAR(y.data[1], 25.0, 1e-15);
}

TEST(Forward, Reductions) {
  Tensor<double> x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Graph<double> g;
  NodeId xi = g.input(x);
  EXPECT_NEAR(g.value(g.sum(xi)).data[0], 21.0, 1e-15);
  EXPECT_NEAR(g.value(g.batch_mean(xi)).data[0], 21.0 / 6.0, 1e-15);
  const auto& rows = g.value(g.sum_rows(xi));
  ASSERT_EQ(rows.shape, (Shape{2}));
  EXPECT_NEAR(rows.data[0], 6.0, 1e-15);
  EXPECT_NEAR(rows.data[1], 15.0, 1e-15);
}

TEST(Forward, MatmulNtMatchesNaive) {
  Rng rng = Rng::stream(3, "fwd/matmul");
  Tensor<double> a = rand_tensor(Shape{3, 4}, rng);
  Tensor<double> b = rand_tensor(Shape{5, 4}, rng);
  Graph<double> g;
  const auto& y = g.value(g.matmul_nt(g.input(a), g.input(b)));
  ASSERT_EQ(y.shape, (Shape{3, 5}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k)
        acc += a.data[i * 4 + k] * b.data[j * 4 + k];
      EXPECT_NEAR(y.data[i * 5 + j], acc, 1e-12);
    }
}

TEST(Forward, L2NormalizeRowsHaveUnitNorm) {
  Rng rng = Rng::stream(4, "fwd/l2");
  Tensor<double> x = rand_tensor(Shape{4, 6}, rng, 0.2, 2.0);
  Graph<double> g;
  const auto& y = g.value(g.l2_normalize(g.input(x)));
  for (std::size_t r = 0; r < 4; ++r) {
    double sq = 0;
    for (std::size_t c = 0; c < 6; ++c) sq += y.data[r * 6 + c] * y.data[r * 6 + c];
    EXPECT_NEAR(sq, 1.0, 1e-12);
  }
  Tensor<double> zero_row = x;
  for (std::size_t c = 0; c < 6; ++c) zero_row.data[c] = 0;
  Graph<double> g2;
  EXPECT_THROW(g2.l2_normalize(g2.input(zero_row)), Error);
}

TEST(Forward, RowLogsumexpBothModes) {
  Tensor<double> x(Shape{2, 2}, {0, std::log(3.0), std::log(2.0), 0});
  Graph<double> g;
  NodeId xi = g.input(x);
  const auto& full = g.value(g.row_logsumexp(xi, false));
  EXPECT_NEAR(full.data[0], std::log(4.0), 1e-12);  // 1 + 3
  EXPECT_NEAR(full.data[1], std::log(3.0), 1e-12);  // 2 + 1
  const auto& nodiag = g.value(g.row_logsumexp(xi, true));
  EXPECT_NEAR(nodiag.data[0], std::log(3.0), 1e-12);
  EXPECT_NEAR(nodiag.data[1], std::log(2.0), 1e-12);
  Tensor<double> rect(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Graph<double> g2;
  EXPECT_THROW(g2.row_logsumexp(g2.input(rect), true), Error);
}

TEST(Forward, GatherSemantics) {
  Tensor<double> x(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  Graph<double> g;
  NodeId xi = g.input(x);
  const auto& rows = g.value(g.gather_rows(xi, {2, 0, 2}));
  EXPECT_EQ(rows.data, (std::vector<double>{5, 6, 1, 2, 5, 6}));
  const auto& cols = g.value(g.gather_cols(xi, {1, 0, 1}));
  EXPECT_EQ(cols.data, (std::vector<double>{2, 3, 6}));
  EXPECT_THROW(g.gather_rows(xi, {3}), Error);
  EXPECT_THROW(g.gather_cols(xi, {0, 0}), Error);  // count != rows
}

TEST(Forward, ConcatCols) {
  Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
  Tensor<double> b(Shape{2, 1}, {9, 8});
  Graph<double> g;
  const auto& y = g.value(g.concat_cols(g.input(a), g.input(b)));
  ASSERT_EQ(y.shape, (Shape{2, 3}));
  EXPECT_EQ(y.data, (std::vector<double>{1, 2, 9, 3, 4, 8}));
}

// ----- gradient checks against central finite differences -----

TEST(Gradient, Relu) {
  Rng rng = Rng::stream(10, "gd/relu");
  Tensor<double> x = rand_tensor(Shape{3, 4}, rng);
  for (auto& v : x.data) v += (v >= 0 ? 0.2 : -0.2);  // keep away from kink
  expect_gradient_matches(x, [](Graph<double>& g, NodeId xi) {
    return g.relu(xi);
  });
}

TEST(Gradient, Tanh) {
  Rng rng = Rng::stream(11, "gd/tanh");
  expect_gradient_matches(rand_tensor(Shape{2, 5}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.tanh_(xi);
                          });
}

TEST(Gradient, LinearAllInputs) {
  Rng rng = Rng::stream(12, "gd/linear");
  const Tensor<double> x0 = rand_tensor(Shape{3, 4}, rng);
  const Tensor<double> w0 = rand_tensor(Shape{5, 4}, rng);
  const Tensor<double> b0 = rand_tensor(Shape{5}, rng);
  expect_gradient_matches(x0, [&](Graph<double>& g, NodeId xi) {
    return g.linear(xi, g.input(w0), g.input(b0));
  });
  expect_gradient_matches(w0, [&](Graph<double>& g, NodeId wi) {
    return g.linear(g.input(x0), wi, g.input(b0));
  });
  expect_gradient_matches(b0, [&](Graph<double>& g, NodeId bi) {
    return g.linear(g.input(x0), g.input(w0), bi);
  });
}

TEST(Gradient, Conv2dAllInputs) {
  Rng rng = Rng::stream(13, "gd/conv");
  const Tensor<double> x0 = rand_tensor(Shape{2, 2, 5, 5}, rng);
  const Tensor<double> w0 = rand_tensor(Shape{3, 2, 3, 3}, rng);
  const Tensor<double> b0 = rand_tensor(Shape{3}, rng);
  expect_gradient_matches(x0, [&](Graph<double>& g, NodeId xi) {
    return g.conv2d(xi, g.input(w0), g.input(b0), 2, 1);
  });
  expect_gradient_matches(w0, [&](Graph<double>& g, NodeId wi) {
    return g.conv2d(g.input(x0), wi, g.input(b0), 2, 1);
  });
  expect_gradient_matches(b0, [&](Graph<double>& g, NodeId bi) {
    return g.conv2d(g.input(x0), g.input(w0), bi, 2, 1);
  });
}

TEST(Gradient, PoolAndReductions) {
  Rng rng = Rng::stream(14, "gd/red");
  expect_gradient_matches(rand_tensor(Shape{2, 3, 4, 4}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.global_avg_pool(xi);
                          });
  expect_gradient_matches(rand_tensor(Shape{3, 4}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.batch_mean(xi);
                          });
  expect_gradient_matches(rand_tensor(Shape{3, 4}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.sum_rows(xi);
                          });
  expect_gradient_matches(rand_tensor(Shape{3, 4}, rng),
                          [](Graph<double>& g, NodeId xi) { return g.sum(xi); });
}

TEST(Gradient, L2Normalize) {
  Rng rng = Rng::stream(15, "gd/l2");
  Tensor<double> x = rand_tensor(Shape{4, 5}, rng);
  for (std::size_t r = 0; r < 4; ++r) x.data[r * 5] += 1.0;  // safe norms
  expect_gradient_matches(x, [](Graph<double>& g, NodeId xi) {
    return g.l2_normalize(xi);
  });
}

TEST(Gradient, MatmulNt) {
  Rng rng = Rng::stream(16, "gd/mm");
  const Tensor<double> a0 = rand_tensor(Shape{3, 4}, rng);
  const Tensor<double> b0 = rand_tensor(Shape{5, 4}, rng);
  expect_gradient_matches(a0, [&](Graph<double>& g, NodeId ai) {
    return g.matmul_nt(ai, g.input(b0));
  });
  expect_gradient_matches(b0, [&](Graph<double>& g, NodeId bi) {
    return g.matmul_nt(g.input(a0), bi);
  });
  // Both operands the same node (the similarity-matrix pattern).
  expect_gradient_matches(a0, [](Graph<double>& g, NodeId ai) {
    return g.matmul_nt(ai, ai);
  });
}

TEST(Gradient, ElementwiseAndScalarOps) {
  Rng rng = Rng::stream(17, "gd/elem");
  const Tensor<double> other = rand_tensor(Shape{3, 3}, rng);
  for (auto build : std::vector<std::function<NodeId(Graph<double>&, NodeId)>>{
           [&](Graph<double>& g, NodeId xi) { return g.add(xi, g.input(other)); },
           [&](Graph<double>& g, NodeId xi) { return g.sub(g.input(other), xi); },
           [&](Graph<double>& g, NodeId xi) { return g.mul(xi, g.input(other)); },
           [&](Graph<double>& g, NodeId xi) { return g.mul(xi, xi); },
           [&](Graph<double>& g, NodeId xi) { return g.scale(xi, -2.5); },
           [&](Graph<double>& g, NodeId xi) { return g.add_scalar(xi, 3.25); }}) {
    expect_gradient_matches(rand_tensor(Shape{3, 3}, rng), build);
  }
}

TEST(Gradient, ConcatAndGathers) {
  Rng rng = Rng::stream(18, "gd/gather");
  const Tensor<double> other = rand_tensor(Shape{4, 2}, rng);
  expect_gradient_matches(rand_tensor(Shape{4, 3}, rng),
                          [&](Graph<double>& g, NodeId xi) {
                            return g.concat_cols(xi, g.input(other));
                          });
  expect_gradient_matches(rand_tensor(Shape{4, 3}, rng),
                          [&](Graph<double>& g, NodeId xi) {
                            return g.concat_cols(g.input(other), xi);
                          });
  expect_gradient_matches(rand_tensor(Shape{4, 3}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.gather_rows(xi, {0, 2, 2, 3, 1});
                          });
  expect_gradient_matches(rand_tensor(Shape{4, 3}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.gather_cols(xi, {2, 0, 1, 1});
                          });
}

TEST(Gradient, RowLogsumexp) {
  Rng rng = Rng::stream(19, "gd/lse");
  expect_gradient_matches(rand_tensor(Shape{4, 4}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.row_logsumexp(xi, false);
                          });
  expect_gradient_matches(rand_tensor(Shape{4, 4}, rng),
                          [](Graph<double>& g, NodeId xi) {
                            return g.row_logsumexp(xi, true);
                          });
}

TEST(Gradient, NtXentComposition) {
  Rng rng = Rng::stream(20, "gd/ntxent");
  Tensor<double> z = rand_tensor(Shape{8, 6}, rng);
  Tensor<double> analytic;
  {
    Graph<double> g;
    NodeId zi = g.input(z, true);
    NodeId loss = clfd::nt_xent_batch_graph(g, zi, 0.5);
    g.backward(loss);
    analytic = g.grad(zi);
  }
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double orig = z.data[i];
    z.data[i] = orig + h;
    const double up = clfd::nt_xent_batch_value(z, 0.5);
    z.data[i] = orig - h;
    const double dn = clfd::nt_xent_batch_value(z, 0.5);
    z.data[i] = orig;
    const double numeric = (up - dn) / (2 * h);
    const double a = analytic.data[i];
    const double rel =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    EXPECT_LT(rel, 1e-6) << "coord " << i;
  }
}

// ----- tape lifecycle -----

TEST(Tape, GradBeforeBackwardErrors) {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{2}, {1, 2}), true);
  EXPECT_THROW(g.grad(x), Error);
}

TEST(Tape, SecondBackwardErrors) {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{2}, {1, 2}), true);
  NodeId loss = g.sum(x);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), Error);
}

TEST(Tape, RecordAfterBackwardErrors) {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{2}, {1, 2}), true);
  g.backward(g.sum(x));
  EXPECT_THROW(g.relu(x), Error);
}

TEST(Tape, NonScalarLossRejected) {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{2}, {1, 2}), true);
  EXPECT_THROW(g.backward(x), Error);
}

TEST(Tape, UnreachedNodeHasZeroGrad) {
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{2}, {1, 2}), true);
  NodeId y = g.input(Tensor<double>(Shape{3}, {1, 2, 3}), true);
  g.backward(g.sum(x));
  const Tensor<double> gy = g.grad(y);
  EXPECT_EQ(gy.shape, (Shape{3}));
  for (double v : gy.data) EXPECT_EQ(v, 0.0);
}

TEST(Tape, RequiresGradPropagation) {
  Graph<double> g;
  NodeId a = g.input(Tensor<double>(Shape{2}, {1, 2}), false);
  NodeId b = g.input(Tensor<double>(Shape{2}, {3, 4}), true);
  EXPECT_FALSE(g.requires_grad(g.relu(a)));
  EXPECT_TRUE(g.requires_grad(g.add(a, b)));
}

TEST(Tape, GradientAccumulatesThroughSharedNode) {
  // loss = sum(x + x): dx must be 2 everywhere.
  Graph<double> g;
  NodeId x = g.input(Tensor<double>(Shape{3}, {1, 2, 3}), true);
  g.backward(g.sum(g.add(x, x)));
  for (double v : g.grad(x).data) EXPECT_NEAR(v, 2.0, 1e-15);
}

}  // namespace
