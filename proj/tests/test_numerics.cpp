#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "fmital/numerics.hpp"
#include "fmital/rng.hpp"
#include "helpers.hpp"

using namespace fmital;
using fmital::testing::random_array;
using fmital::testing::random_vector;

TEST(Softmax, SymmetricPairIsHalfHalf) {
  const auto p = softmax({2.0, 2.0});
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[1], 0.5, 1e-12);
}

TEST(Softmax, LogThreeGivesQuarterAndThreeQuarters) {
  const auto p = softmax({0.0, std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-12);
  EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(Softmax, MaskedEntryIsExactlyZero) {
  const auto p = softmax({5.0, 1.0, 9.0}, {true, true, false});
  const double z = std::exp(5.0) + std::exp(1.0);
  EXPECT_NEAR(p[0], std::exp(5.0) / z, 1e-12);
  EXPECT_NEAR(p[1], std::exp(1.0) / z, 1e-12);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Softmax, EmptyMaskIsRejected) {
  try {
    softmax({1.0, 2.0}, {false, false});
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no valid positions"), std::string::npos);
  }
}

TEST(Softmax, MaskLengthMismatchAndNonFiniteInput) {
  EXPECT_THROW(softmax({1.0, 2.0}, {true}), ShapeError);
  EXPECT_THROW(softmax({1.0, NAN}), NumericalError);
  EXPECT_THROW(softmax({1.0, INFINITY}), NumericalError);
}

TEST(Softmax, HugeLogitsStayFinite) {
  const auto p = softmax({1000.0, 999.0, -1000.0});
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_NEAR(p[0] / p[1], std::numbers::e, 1e-9);
}

TEST(SoftmaxProperty, ProbabilityVectorOverValidPositions) {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
    const auto v = random_vector(rng, n, -30, 30);
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < 0.7;
    mask[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))] = true;
    const auto p = softmax(v, mask);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GE(p[i], 0.0);
      if (!mask[i]) {
        EXPECT_EQ(p[i], 0.0);
      }
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(SoftmaxProperty, ShiftInvariance) {
  Rng rng(102);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 30));
    auto v = random_vector(rng, n, -10, 10);
    const double c = rng.uniform(-100, 100);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    const auto a = softmax(v), b = softmax(shifted);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  }
}

TEST(Cosine, IdenticalOrthogonalAndDiagonal) {
  EXPECT_NEAR(cosine_similarity(std::vector<float>{1, 2, 3}, std::vector<float>{1, 2, 3}), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(std::vector<float>{1, 0}, std::vector<float>{1, 1}), 0.70710678, 1e-8);
}

TEST(Cosine, ZeroNormIsZeroAndLengthMismatchThrows) {
  EXPECT_EQ(cosine_similarity(std::vector<float>{0, 0}, std::vector<float>{1, 1}), 0.0);
  EXPECT_THROW(cosine_similarity(std::vector<float>{1, 0}, std::vector<float>{1, 1, 1}), ShapeError);
}

TEST(CosineProperty, RangeSymmetryAndPositiveScaling) {
  Rng rng(103);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 64));
    std::vector<float> a(n), b(n), scaled(n);
    const double lambda = rng.uniform(0.01, 100);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<float>(rng.uniform(-1, 1));
      b[i] = static_cast<float>(rng.uniform(-1, 1));
      scaled[i] = static_cast<float>(lambda * b[i]);
    }
    const double ab = cosine_similarity(a, b);
    EXPECT_GE(ab, -1.0 - 1e-6);
    EXPECT_LE(ab, 1.0 + 1e-6);
    EXPECT_NEAR(ab, cosine_similarity(b, a), 1e-12);
    EXPECT_NEAR(ab, cosine_similarity(a, scaled), 1e-6);
  }
}

TEST(Affine, IdentityWeightZeroBias) {
  Rng rng(1);
  const Array x = random_array(rng, {3, 4, 5});
  Array eye({5, 5});
  for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0f;
  EXPECT_EQ(affine(x, eye, Array({5})), x);
}

TEST(Affine, HandExample) {
  const Array out = affine(Array({1, 2}, {1, 2}), Array({2, 1}, {1, 1}), Array({1}, {0.5f}));
  ASSERT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_FLOAT_EQ(out.values()[0], 3.5f);
}

TEST(Affine, MatchesNaiveTripleLoop) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = static_cast<std::size_t>(rng.uniform_int(1, 9));
    const auto din = static_cast<std::size_t>(rng.uniform_int(1, 17));
    const auto dout = static_cast<std::size_t>(rng.uniform_int(1, 13));
    const Array x = random_array(rng, {rows, din}), w = random_array(rng, {din, dout}), b = random_array(rng, {dout});
    const Array got = affine(x, w, b);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < dout; ++j) {
        double acc = b.values()[j];
        for (std::size_t k = 0; k < din; ++k) acc += static_cast<double>(x.at(r, k)) * w.at(k, j);
        EXPECT_NEAR(got.at(r, j), acc, 1e-5);
      }
    }
  }
}

TEST(Affine, ShapeMismatches) {
  EXPECT_THROW(affine(Array({2, 3}), Array({4, 2}), Array({2})), ShapeError);
  EXPECT_THROW(affine(Array({2, 3}), Array({3, 2}), Array({3})), ShapeError);
  EXPECT_THROW(Array({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Affine, NonFiniteOutputIsReported) {
  EXPECT_THROW(affine(Array({1, 1}, {3e38f}), Array({1, 1}, {10.0f}), Array({1})), NumericalError);
}

TEST(Conv1x1, EqualsAffineWithZeroBias) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, 20));
    const auto din = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const auto dout = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const Array x = random_array(rng, {t, din}), k = random_array(rng, {din, dout});
    EXPECT_LT(max_abs_diff(conv1x1(x, k), affine(x, k, Array({dout}))), 1e-6);
  }
}

TEST(Conv1x1, PerTimestepEqualsSingleRowAffine) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const Array x = random_array(rng, {t, 6}), k = random_array(rng, {6, 5});
    const Array full = conv1x1(x, k);
    for (std::size_t i = 0; i < t; ++i) {
      const Array row({1, 6}, std::vector<float>(x.slice(i).begin(), x.slice(i).end()));
      const Array single = affine(row, k, std::span<const float>{});
      for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(full.at(i, j), single.at(0, j));
    }
  }
}

TEST(Conv1x1, IdentityKernelAndSingleStep) {
  Rng rng(5);
  const Array x = random_array(rng, {7, 4});
  Array eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0f;
  EXPECT_EQ(conv1x1(x, eye), x);
  const Array one = random_array(rng, {1, 4}), k = random_array(rng, {4, 3});
  EXPECT_EQ(conv1x1(one, k), affine(one, k, std::span<const float>{}));
  EXPECT_THROW(conv1x1(random_array(rng, {2, 3, 4}), k), ShapeError);
  EXPECT_THROW(conv1x1(random_array(rng, {2, 3}), k), ShapeError);
}

TEST(SinusoidalPe, FirstRowAlternatesZeroOne) {
  const Array pe = sinusoidal_pe(4, 8);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe.at(0, c), c % 2 == 0 ? 0.0f : 1.0f);
}

TEST(SinusoidalPe, BoundedAndPrefixStable) {
  const Array pe = sinusoidal_pe(128, 64);
  for (float v : pe.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  const Array longer = sinusoidal_pe(129, 64);
  for (std::size_t t = 0; t < 128; ++t) {
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(pe.at(t, c), longer.at(t, c));
  }
}

TEST(SinusoidalPe, MatchesClosedForm) {
  const Array pe = sinusoidal_pe(10, 6);
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t i = 0; i < 3; ++i) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / 6.0);
      EXPECT_NEAR(pe.at(t, 2 * i), std::sin(angle), 1e-6);
      EXPECT_NEAR(pe.at(t, 2 * i + 1), std::cos(angle), 1e-6);
    }
  }
}

TEST(SinusoidalPe, RejectsOddOrTinyChannels) {
  EXPECT_THROW(sinusoidal_pe(4, 7), UsageError);
  EXPECT_THROW(sinusoidal_pe(4, 0), UsageError);
  EXPECT_THROW(sinusoidal_pe(0, 4), UsageError);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  Rng rng(6);
  const Array x = random_array(rng, {5, 32}, -3, 7);
  const Array y = layer_norm_rows(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (float v : y.slice(r)) mean += v;
    mean /= 32;
    for (float v : y.slice(r)) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var / 32, 1.0, 1e-3);
  }
}

TEST(Rng, KnownMersenneTwisterOutput) {
  Rng rng(5489);
  std::uint64_t last = 0;
  for (int i = 0; i < 10000; ++i) last = rng.next_u64();
  EXPECT_EQ(last, 9981545732273789042ULL);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(77), b(77);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
    ASSERT_EQ(a.uniform(), b.uniform());
    ASSERT_EQ(a.normal(), b.normal());
    ASSERT_EQ(a.uniform_int(-5, 5), b.uniform_int(-5, 5));
  }
}

TEST(Rng, ForkIsPureAndDistinct) {
  const Rng parent(9);
  Rng a = parent.fork(1), b = parent.fork(1), c = parent.fork(2);
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  Rng fresh(9);
  Rng copy = parent;
  EXPECT_EQ(fresh.next_u64(), copy.next_u64());
}

TEST(Rng, RangesAndMoments) {
  Rng rng(10);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const auto k = rng.uniform_int(3, 6);
    EXPECT_GE(k, 3);
    EXPECT_LE(k, 6);
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  EXPECT_NEAR(mean / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}
