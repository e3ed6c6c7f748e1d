#include "depthprobe/numerics.hpp"

#include <cmath>
#include <gtest/gtest.h>

#include "depthprobe/rng.hpp"
#include "oracles.hpp"

using namespace depthprobe;

TEST(Softmax, UniformOnEqualLogits) {
  const std::vector<float> logits = {0.f, 0.f, 0.f, 0.f};
  const auto p = softmax(logits);
  for (float x : p) EXPECT_NEAR(x, 0.25f, 1e-7f);
}

TEST(Softmax, OverflowSafety) {
  const std::vector<float> logits = {1000.f, 0.f};
  const auto p = softmax(logits);
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesDirectEvaluation) {
  const std::vector<float> logits = {1.f, 2.f, 3.f};
  const auto p = softmax(logits);
  // direct 64-bit evaluation of e^x / sum e^x
  double z = 0.0;
  for (float x : logits) z += std::exp(static_cast<double>(x));
  for (size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(p[i], std::exp(logits[i]) / z, 1e-7);
  EXPECT_NEAR(p[0], 0.09003057, 1e-6);
  EXPECT_NEAR(p[1], 0.24472847, 1e-6);
  EXPECT_NEAR(p[2], 0.66524096, 1e-6);
}

TEST(Softmax, SumsToOneForLargeInputs) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<float> logits(25);
    for (auto& x : logits) x = static_cast<float>(rng.uniform(-1e4, 1e4));
    const auto p = softmax(logits);
    double total = 0.0;
    for (float x : p) {
      EXPECT_GE(x, 0.0f);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, RejectsNonFinite) {
  const std::vector<float> bad = {1.f, std::numeric_limits<float>::infinity()};
  EXPECT_THROW(softmax(bad), ValueError);
  EXPECT_THROW(softmax(std::vector<float>{}), ValueError);
}

TEST(LogSoftmax, TwoEqualLogits) {
  const std::vector<float> logits = {0.f, 0.f};
  const auto ls = log_softmax(logits);
  EXPECT_NEAR(ls[0], -std::log(2.0), 1e-9);
  EXPECT_NEAR(ls[1], -std::log(2.0), 1e-9);
}

TEST(LogSoftmax, ShiftInvariance) {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<float> logits(10), shifted(10);
    const float c = static_cast<float>(rng.uniform(-5, 5));
    for (size_t i = 0; i < logits.size(); ++i) {
      logits[i] = static_cast<float>(rng.uniform(-5, 5));
      shifted[i] = logits[i] + c;
    }
    const auto a = log_softmax(logits);
    const auto b = log_softmax(shifted);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  }
}

TEST(LogSoftmax, MatchesSoftmaxExample) {
  const std::vector<float> logits = {1.f, 2.f, 3.f};
  const auto ls = log_softmax(logits);
  EXPECT_NEAR(ls[0], -2.40760596, 1e-6);
  EXPECT_NEAR(ls[1], -1.40760596, 1e-6);
  EXPECT_NEAR(ls[2], -0.40760596, 1e-6);
  double total = 0.0;
  for (double x : ls) total += std::exp(x);
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(KlDivergence, SelfIsZero) {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<float> logits(25);
    for (auto& x : logits) x = static_cast<float>(rng.uniform(-3, 3));
    const auto p = softmax(logits);
    EXPECT_LE(std::abs(kl_divergence(p, p).value), 1e-9);
  }
}

TEST(KlDivergence, HandEvaluatedPairs) {
  // KL([1,0] || [.5,.5]) = 1*ln(1/.5) = ln 2
  const KlResult a = kl_divergence({1.f, 0.f}, {0.5f, 0.5f});
  EXPECT_NEAR(a.value, std::log(2.0), 1e-6);
  EXPECT_FALSE(a.clamped);
  // 0.5*ln(.5/.9) + 0.5*ln(.5/.1)
  const KlResult b = kl_divergence({0.5f, 0.5f}, {0.9f, 0.1f});
  EXPECT_NEAR(b.value, 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-6);
  EXPECT_NEAR(b.value, 0.510826, 1e-6);
}

TEST(KlDivergence, NonNegativeOnRandomPairs) {
  Rng rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<float> la(20), lb(20);
    for (auto& x : la) x = static_cast<float>(rng.uniform(-4, 4));
    for (auto& x : lb) x = static_cast<float>(rng.uniform(-4, 4));
    EXPECT_GE(kl_divergence(softmax(la), softmax(lb)).value, -1e-9);
  }
}

TEST(KlDivergence, ClampsZeroDenominator) {
  const KlResult r = kl_divergence({0.5f, 0.5f}, {1.0f, 0.0f});
  EXPECT_TRUE(r.clamped);
  EXPECT_NEAR(r.value, 0.5 * std::log(0.5 / 1e-12) + 0.5 * std::log(0.5), 1e-6);
}

TEST(Spearman, MonotoneAndReversed) {
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{10, 20, 30}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0);
}

TEST(Spearman, TieHandlingMatchesOracle) {
  const std::vector<double> a = {1, 2, 2, 4};
  const std::vector<double> b = {1, 3, 2, 4};
  EXPECT_NEAR(*spearman(a, b), oracle::spearman(a, b), 1e-12);
}

TEST(Spearman, RandomTieBearingVectorsMatchOracle) {
  Rng rng(17);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_int(48));
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = static_cast<double>(rng.uniform_int(8));  // many ties
    for (auto& x : b) x = static_cast<double>(rng.uniform_int(8));
    const auto ours = spearman(a, b);
    bool a_const = true, b_const = true;
    for (double x : a) a_const = a_const && x == a[0];
    for (double x : b) b_const = b_const && x == b[0];
    if (a_const || b_const) {
      EXPECT_FALSE(ours.has_value());
      continue;
    }
    ASSERT_TRUE(ours.has_value());
    EXPECT_NEAR(*ours, oracle::spearman(a, b), 1e-9);
  }
}

TEST(Spearman, InvariantUnderIncreasingTransforms) {
  Rng rng(19);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 3 + static_cast<int>(rng.uniform_int(20));
    std::vector<double> a(n), b(n), ta(n), tb(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.uniform(-5, 5);
      b[i] = rng.uniform(-5, 5);
      ta[i] = std::exp(a[i]);            // strictly increasing
      tb[i] = b[i] * 3.0 + 1.0;          // strictly increasing
    }
    EXPECT_NEAR(*spearman(a, b), *spearman(ta, tb), 1e-12);
  }
}

TEST(Spearman, ZeroVarianceIsUndefined) {
  EXPECT_FALSE(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
  EXPECT_FALSE(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{5, 5, 5}).has_value());
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), ValueError);
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1}), ValueError);
}

TEST(Argmax, ExamplesAndTieRule) {
  EXPECT_EQ(argmax_top1(std::vector<float>{0.1f, 0.9f, 0.0f}), 1u);
  EXPECT_EQ(argmax_top1(std::vector<float>{0.5f, 0.5f}), 0u);
  EXPECT_THROW(argmax_top1(std::vector<float>{}), ValueError);
}

TEST(Argmax, MatchesLinearScanAndShiftInvariant) {
  Rng rng(23);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 1 + static_cast<int>(rng.uniform_int(30));
    std::vector<float> v(n), shifted(n);
    const float c = static_cast<float>(rng.uniform(-8, 8));
    for (int i = 0; i < n; ++i) {
      v[i] = static_cast<float>(rng.uniform_int(6));
      shifted[i] = v[i] + c;
    }
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[best]) best = i;
    EXPECT_EQ(argmax_top1(v), best);
    EXPECT_EQ(argmax_top1(shifted), best);
  }
}

TEST(L2Diff, ExamplesAndOracle) {
  const std::vector<float> a = {3.f, 4.f};
  const std::vector<float> z = {0.f, 0.f};
  EXPECT_DOUBLE_EQ(l2_diff(std::span<const float>(a), std::span<const float>(a)), 0.0);
  EXPECT_DOUBLE_EQ(l2_diff(std::span<const float>(a), std::span<const float>(z)), 5.0);

  Rng rng(29);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<float> x(16), y(16);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-9, 9));
    for (auto& v : y) v = static_cast<float>(rng.uniform(-9, 9));
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i)
      acc += (double(x[i]) - double(y[i])) * (double(x[i]) - double(y[i]));
    EXPECT_NEAR(l2_diff(std::span<const float>(x), std::span<const float>(y)), std::sqrt(acc), 1e-9);
  }
  const std::vector<float> shorter = {1.f};
  EXPECT_THROW(l2_diff(std::span<const float>(a), std::span<const float>(shorter)), ValueError);
}

TEST(Matrix, FiniteCheckAndShape) {
  Matrix m(2, 3, 1.0f);
  EXPECT_TRUE(m.all_finite());
  m.at(1, 2) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(m.all_finite());
  EXPECT_EQ(m.size(), 6u);
  EXPECT_THROW(Matrix(-1, 2), ValueError);
}
