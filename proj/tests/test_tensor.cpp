#include <gtest/gtest.h>

#include <cstdint>
#include <set>
#include <vector>

#include "clfd/rng.hpp"
#include "clfd/tensor.hpp"
#include "clfd/threading.hpp"

namespace {

using clfd::Error;
using clfd::Rng;
using clfd::Shape;
using clfd::Tensor;

TEST(Shape, NumelAndEquality) {
  EXPECT_EQ(clfd::shape_numel(Shape{2, 3, 4}), 24u);
  EXPECT_EQ(clfd::shape_numel(Shape{7}), 7u);
  EXPECT_TRUE((Shape{2, 3} == Shape{2, 3}));
  EXPECT_FALSE((Shape{2, 3} == Shape{3, 2}));
}

TEST(Tensor, ZerosAndFill) {
  auto t = Tensor<double>::zeros(Shape{2, 3});
  EXPECT_EQ(t.numel(), 6u);
  for (double v : t.data) EXPECT_EQ(v, 0.0);
  auto u = Tensor<float>::full(Shape{4}, 2.5f);
  for (float v : u.data) EXPECT_EQ(v, 2.5f);
}

TEST(Tensor, SizeMismatchRejected) {
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}),
               Error);
}

TEST(Tensor, CastRoundTripsExactSmallValues) {
  Tensor<float> t(Shape{3}, {1.0f, -2.5f, 0.125f});
  auto d = t.cast<double>();
  EXPECT_EQ(d.data[1], -2.5);
  auto f = d.cast<float>();
  EXPECT_EQ(f.data[2], 0.125f);
}

// splitmix64 reference values for state seeded at 0, from the published
// algorithm (Steele et al.); frozen here as an independent oracle.
TEST(Rng, SplitmixKnownAnswers) {
  Rng r(0);
  EXPECT_EQ(r.next_u64(), 0xe220a8397b1dcdafull);
  EXPECT_EQ(r.next_u64(), 0x6e789e6aa1b965f4ull);
  EXPECT_EQ(r.next_u64(), 0x06c45d188009454full);
}

TEST(Rng, UniformBoundsAndDeterminism) {
  Rng a = Rng::stream(42, "test");
  Rng b = Rng::stream(42, "test");
  for (int i = 0; i < 1000; ++i) {
    const double x = a.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
    EXPECT_EQ(x, b.uniform());
  }
}

TEST(Rng, StreamsAreIndependent) {
  Rng a = Rng::stream(1, "alpha");
  Rng b = Rng::stream(1, "beta");
  EXPECT_NE(a.next_u64(), b.next_u64());
  Rng c = Rng::stream(2, "alpha");
  Rng d = Rng::stream(1, "alpha");
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(Rng, UniformIndexCoversRangeUniformly) {
  Rng r = Rng::stream(7, "idx");
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[r.uniform_index(10)]++;
  // Expected 10000 per bucket; 5 sigma of Binomial(1e5, 0.1) is ~474.
  for (int c : counts) {
    EXPECT_GT(c, 10000 - 475);
    EXPECT_LT(c, 10000 + 475);
  }
}

TEST(Rng, NormalMomentsMatch) {
  Rng r = Rng::stream(3, "gauss");
  const int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Rng, StateRoundTrip) {
  Rng r = Rng::stream(9, "s");
  r.next_u64();
  const std::uint64_t s = r.state();
  const std::uint64_t next = r.next_u64();
  Rng q(0);
  q.set_state(s);
  EXPECT_EQ(q.next_u64(), next);
}

TEST(ParallelFor, MatchesSerialForAnyThreadCount) {
  const std::size_t n = 1000;
  std::vector<double> serial(n), parallel(n);
  for (std::size_t i = 0; i < n; ++i) serial[i] = double(i) * 1.5;
  for (int workers : {1, 2, 7}) {
    clfd::set_thread_count(workers);
    std::fill(parallel.begin(), parallel.end(), 0.0);
    clfd::parallel_for(n, [&](std::size_t i) { parallel[i] = double(i) * 1.5; });
    EXPECT_EQ(parallel, serial);
  }
  clfd::set_thread_count(0);
}

TEST(ParallelFor, PropagatesWorkerExceptions) {
  for (int workers : {1, 4}) {
    clfd::set_thread_count(workers);
    try {
      clfd::parallel_for(8, [](std::size_t i) {
        if (i == 5)
          clfd::fail(clfd::ErrorCategory::data, "worker failure at ", i);
      });
      FAIL() << "expected the worker exception to propagate";
    } catch (const clfd::Error& e) {
      EXPECT_EQ(e.category(), clfd::ErrorCategory::data);
      EXPECT_NE(std::string(e.what()).find("worker failure at 5"),
                std::string::npos);
    }
  }
  clfd::set_thread_count(0);
}

}  // namespace
