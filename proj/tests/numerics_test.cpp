#include <algorithm>
#include <cmath>
#include <numeric>

#include "gtest/gtest.h"

#include "ascd/numerics.hpp"
#include "test_support.hpp"

using namespace ascd;

namespace {

// Reference softmax by direct exponentiation, no max-shift.
std::vector<double> naive_softmax(const std::vector<double>& x) {
  std::vector<double> e(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (e[i] = std::exp(x[i]));
  for (auto& v : e) v /= total;
  return e;
}

// Reference top-k: stable sort of all indices by descending value.
std::vector<std::size_t> sort_top_k(const std::vector<float>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace

TEST(Softmax, SymmetricPair) {
  const std::vector<float> p = softmax_row(std::vector<float>{0.0f, 0.0f});
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(Softmax, MaskedEntryIsZero) {
  for (float x : {-30.0f, 0.0f, 7.5f}) {
    const auto p = softmax_row(std::vector<float>{x, kNegInf});
    EXPECT_EQ(p[0], 1.0f);
    EXPECT_EQ(p[1], 0.0f);
  }
}

TEST(Softmax, ClosedFormQuarterThreeQuarters) {
  const auto expected = naive_softmax({std::log(1.0), std::log(3.0)});
  const auto p = softmax_row(std::vector<float>{float(std::log(1.0)), float(std::log(3.0))});
  EXPECT_NEAR(p[0], expected[0], 1e-6);
  EXPECT_NEAR(p[1], expected[1], 1e-6);
  EXPECT_NEAR(expected[0], 0.25, 1e-12);
}

TEST(Softmax, AllMaskedIsEmptySupport) {
  try {
    softmax_row(std::vector<float>{kNegInf, kNegInf});
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "empty support");
  }
  EXPECT_THROW(log_softmax_row(std::vector<float>{kNegInf}), InvalidArgument);
}

TEST(Softmax, HugeLogitsStayFinite) {
  const auto p = softmax_row(std::vector<float>{1e30f, 1e30f, -1e30f});
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[2], 0.0f);
}

TEST(LogSoftmax, Examples) {
  auto a = log_softmax_row(std::vector<float>{0.0f, 0.0f});
  EXPECT_NEAR(a[0], -std::log(2.0), 1e-6);
  auto b = log_softmax_row(std::vector<float>{5.0f, 5.0f, 5.0f});
  for (float v : b) EXPECT_NEAR(v, -std::log(3.0), 1e-6);
  auto c = log_softmax_row(std::vector<float>{0.0f, float(std::log(3.0))});
  EXPECT_NEAR(c[0], -std::log(4.0), 1e-6);
  EXPECT_NEAR(c[1], std::log(3.0) - std::log(4.0), 1e-6);
}

TEST(SoftmaxProperties, ShiftInvarianceAndLogConsistency) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(40);
    std::vector<float> x(n), shifted(n);
    const float shift = float(rng.normal() * 20.0);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = float(rng.normal() * 5.0);
      shifted[i] = x[i] + shift;
    }
    const auto p = softmax_row(x);
    const auto q = softmax_row(shifted);
    const auto lp = log_softmax_row(x);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(p[i], q[i], 1e-6);
      EXPECT_NEAR(std::exp(double(lp[i])), p[i], 1e-6);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(SoftmaxProperties, OrderPreserving) {
  const auto p = softmax_row(std::vector<float>{0.3f, -1.0f, 2.0f, 0.3f});
  EXPECT_GT(p[2], p[0]);
  EXPECT_GT(p[0], p[1]);
  EXPECT_EQ(p[0], p[3]);
}

TEST(TopK, TieBreaksLowestIndex) {
  EXPECT_EQ(top_k_indices(std::vector<float>{0.2f, 0.9f, 0.9f, 0.1f}, 2),
            (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_k_indices(std::vector<float>{5.0f}, 1), (std::vector<std::size_t>{0}));
}

TEST(TopK, MatchesSortOracle) {
  const std::vector<float> v{3, 1, 4, 1, 5};
  EXPECT_EQ(top_k_indices(v, 3), sort_top_k(v, 3));
  EXPECT_EQ(top_k_indices(v, 3), (std::vector<std::size_t>{4, 2, 0}));
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> r(1 + rng.uniform_index(30));
    for (auto& x : r) x = float(rng.uniform_index(6));  // many ties
    const std::size_t k = 1 + rng.uniform_index(r.size());
    EXPECT_EQ(top_k_indices(r, k), sort_top_k(r, k));
  }
}

TEST(TopK, FullLengthIsPermutation) {
  Rng rng(3);
  std::vector<float> v(17);
  for (auto& x : v) x = float(rng.normal());
  auto idx = top_k_indices(v, v.size());
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
}

TEST(TopK, OutOfRange) {
  EXPECT_THROW(top_k_indices(std::vector<float>{1, 2}, 0), InvalidArgument);
  EXPECT_THROW(top_k_indices(std::vector<float>{1, 2}, 3), InvalidArgument);
}

TEST(Rng, Reproducible) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, KnownFirstOutputs) {
  // Frozen stream values; a change here breaks every seeded artifact.
  Rng r(0);
  EXPECT_EQ(r.next_u64(), Rng::mix(0, 0, 0));
  EXPECT_EQ(r.counter(), 1u);
  EXPECT_EQ(Rng(7).child(3).seed(), Rng(7).child(3).seed());
  EXPECT_NE(Rng(7).child(3).seed(), Rng(7).child(4).seed());
}

TEST(SampleCategorical, Degenerate) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sample_categorical(std::vector<float>{1.0f}, rng), 0u);
    EXPECT_EQ(sample_categorical(std::vector<float>{0.0f, 1.0f}, rng), 1u);
  }
}

TEST(SampleCategorical, LawOfLargeNumbers) {
  Rng rng(2024);
  const std::vector<float> p{0.25f, 0.75f};
  int zeros = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) zeros += sample_categorical(p, rng) == 0 ? 1 : 0;
  EXPECT_NEAR(double(zeros) / n, 0.25, 0.01);
}

TEST(SampleCategorical, RejectsUnnormalized) {
  Rng rng(1);
  EXPECT_THROW(sample_categorical(std::vector<float>{0.5f, 0.6f}, rng), InvalidArgument);
  EXPECT_THROW(sample_categorical(std::vector<float>{}, rng), InvalidArgument);
}

TEST(Tensor, ShapeAndRows) {
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  t.at(1, 2) = 4.0f;
  EXPECT_EQ(t.row(1)[2], 4.0f);
  EXPECT_TRUE(t.consistent());
  EXPECT_TRUE(t.all_finite());
}
