#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "saflex/augment.hpp"
#include "test_util.hpp"

using namespace saflex;

namespace {

Batch make_batch(std::size_t n, std::size_t d, std::size_t K, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Batch b;
  b.X = test::random_matrix(n, d, eng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(i % K);
  return b;
}

bool same(const Batch& a, const Batch& b) {
  return a.X == b.X && a.labels == b.labels && a.soft_labels.has_value() == b.soft_labels.has_value() &&
         (!a.soft_labels || *a.soft_labels == *b.soft_labels);
}

} // namespace

TEST(GaussianJitter, ZeroSigmaIsIdentity) {
  Batch b = make_batch(5, 3, 2, 1);
  Engine eng(1);
  EXPECT_TRUE(same(gaussian_jitter(b, 0.0, eng), b));
}

TEST(GaussianJitter, ReproducibleAndValueSemantics) {
  Batch b = make_batch(5, 3, 2, 2);
  const Batch copy = b;
  Engine e1(7), e2(7);
  Batch a = gaussian_jitter(b, 0.3, e1), c = gaussian_jitter(b, 0.3, e2);
  EXPECT_TRUE(same(a, c));
  EXPECT_TRUE(same(b, copy));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.X.rows(), b.X.rows());
  EXPECT_EQ(a.X.cols(), b.X.cols());
}

TEST(GaussianJitter, NoiseMeanAndVariance) {
  const double sigma = 0.5;
  Batch b = make_batch(10000, 3, 2, 3);
  Engine eng(3);
  Batch a = gaussian_jitter(b, sigma, eng);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < 10000; ++i) {
      const double e = a.X(i, c) - b.X(i, c);
      s += e;
      s2 += e * e;
    }
    EXPECT_LE(std::abs(s / 10000), 4 * sigma / 100);
    EXPECT_NEAR(s2 / 10000, sigma * sigma, 0.05 * sigma * sigma);
  }
}

TEST(GaussianJitter, NegativeSigmaRejected) {
  Engine eng(1);
  EXPECT_ANY_THROW(gaussian_jitter(make_batch(2, 2, 2, 1), -0.1, eng));
}

TEST(CutmixTabular, ZeroProbabilityIsIdentity) {
  Batch b = make_batch(6, 4, 2, 4);
  Engine eng(4);
  EXPECT_TRUE(same(cutmix_tabular(b, 0.0, eng), b));
}

TEST(CutmixTabular, FullReplacementComesFromOtherRows) {
  Batch b = make_batch(6, 4, 3, 5);
  Engine eng(5);
  Batch a = cutmix_tabular(b, 1.0, eng);
  EXPECT_EQ(a.labels, b.labels);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      bool from_donor = false;
      for (std::size_t j = 0; j < 6; ++j) from_donor = from_donor || (j != i && a.X(i, c) == b.X(j, c));
      EXPECT_TRUE(from_donor);
    }
  }
}

TEST(CutmixTabular, ValuesStayInSourceColumn) {
  // Categorical-like columns: values only from the column's own support.
  Engine eng(6);
  Batch b;
  b.X = Matrix(50, 3);
  std::uniform_int_distribution<int> cat(0, 4);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t c = 0; c < 3; ++c) b.X(i, c) = cat(eng) + 10.0 * c;
    b.labels.push_back(0);
  }
  Batch a = cutmix_tabular(b, 0.5, eng);
  for (std::size_t c = 0; c < 3; ++c) {
    std::set<double> src;
    for (std::size_t i = 0; i < 50; ++i) src.insert(b.X(i, c));
    for (std::size_t i = 0; i < 50; ++i) EXPECT_TRUE(src.count(a.X(i, c)));
  }
}

TEST(CutmixTabular, GroupsReplacedAsUnit) {
  Batch b = make_batch(8, 5, 2, 7);
  Engine eng(7);
  Batch a = cutmix_tabular(b, 0.5, eng, {{0, 1}, {1, 3}, {4, 1}});
  for (std::size_t i = 0; i < 8; ++i) {
    std::size_t src = 8;
    for (std::size_t j = 0; j < 8; ++j)
      if (a.X(i, 1) == b.X(j, 1)) src = j;
    ASSERT_LT(src, 8u);
    EXPECT_EQ(a.X(i, 2), b.X(src, 2));
    EXPECT_EQ(a.X(i, 3), b.X(src, 3));
  }
}

TEST(CutmixTabular, ReplacementRate) {
  Batch b = make_batch(2000, 5, 2, 8);
  Engine eng(8);
  Batch a = cutmix_tabular(b, 0.3, eng);
  std::size_t changed = 0;
  for (std::size_t j = 0; j < a.X.data().size(); ++j) changed += a.X.data()[j] != b.X.data()[j];
  EXPECT_NEAR(changed / 10000.0, 0.3, 0.02);
}

TEST(CutmixTabular, DegenerateBatchAndBadProbability) {
  Batch b = make_batch(1, 3, 2, 9);
  Engine eng(9);
  EXPECT_TRUE(same(cutmix_tabular(b, 1.0, eng), b));
  EXPECT_THROW(cutmix_tabular(b, 1.5, eng), DomainError);
}

TEST(Mixup, LambdaOneIsIdentityWithOneHotLabels) {
  Batch b = make_batch(4, 3, 3, 10);
  Batch a = mixup_with(b, 1.0, {3, 2, 1, 0}, 3);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(*a.soft_labels, b.targets(3));
}

TEST(Mixup, HalfLambdaTwoClasses) {
  Batch b;
  b.X = Matrix{{0.0, 2.0}, {4.0, 6.0}};
  b.labels = {0, 1};
  Batch a = mixup_with(b, 0.5, {1, 0}, 2);
  EXPECT_DOUBLE_EQ((*a.soft_labels)(0, 0), 0.5);
  EXPECT_DOUBLE_EQ((*a.soft_labels)(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(a.X(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(a.X(0, 1), 4.0);
}

TEST(Mixup, SoftLabelsOnSimplexAndBetaMoments) {
  // Every row has its own class, so row 0's own-class mass is lambda.
  Batch b = make_batch(16, 3, 16, 11);
  double s = 0, s2 = 0;
  int used = 0;
  for (int t = 0; t < 4000; ++t) {
    Engine eng(static_cast<std::uint64_t>(t));
    Batch a = mixup(b, 2.0, 16, eng);
    for (std::size_t i = 0; i < 16; ++i) {
      double sum = 0;
      for (double v : a.soft_labels->row(i)) {
        ASSERT_GE(v, 0.0);
        sum += v;
      }
      ASSERT_NEAR(sum, 1.0, 1e-12);
    }
    const double lam = (*a.soft_labels)(0, 0);
    if (lam == 1.0) continue; // paired with itself
    s += lam;
    s2 += lam * lam;
    ++used;
  }
  // Beta(2,2): mean 1/2, variance 1/20.
  const double mean = s / used, var = s2 / used - mean * mean;
  EXPECT_NEAR(mean, 0.5, 4 * std::sqrt(0.05 / used));
  EXPECT_NEAR(var, 0.05, 0.005);
  Engine eng(1);
  EXPECT_THROW(mixup(b, 0.0, 16, eng), DomainError);
}

TEST(CropFlip, PadZeroNoFlipIsIdentity) {
  Batch b = make_batch(5, 64, 2, 12);
  Engine eng(12);
  EXPECT_TRUE(same(crop_flip(b, 0, eng, 0.0), b));
}

TEST(CropFlip, OffsetsCoverFiveByFive) {
  // One-hot image marks the pixel; its shifted position reveals (dy, dx).
  const std::size_t side = 8, pad = 2;
  Batch b;
  b.X = Matrix(4000, side * side);
  for (std::size_t i = 0; i < 4000; ++i) {
    b.X(i, 3 * side + 3) = 1.0;
    b.labels.push_back(0);
  }
  Engine eng(13);
  Batch a = crop_flip(b, pad, eng, 0.0);
  std::set<std::pair<long, long>> shifts;
  for (std::size_t i = 0; i < 4000; ++i) {
    std::size_t where = 0, count = 0;
    for (std::size_t j = 0; j < side * side; ++j)
      if (a.X(i, j) == 1.0) where = j, ++count;
    ASSERT_EQ(count, 1u);
    shifts.insert({static_cast<long>(where / side) - 3, static_cast<long>(where % side) - 3});
  }
  EXPECT_EQ(shifts.size(), 25u);
  for (auto [r, c] : shifts) {
    EXPECT_LE(std::abs(r), 2);
    EXPECT_LE(std::abs(c), 2);
  }
}

TEST(CropFlip, FlipRateAndMirror) {
  const std::size_t side = 4;
  Batch b;
  b.X = Matrix(10000, side * side);
  for (std::size_t i = 0; i < 10000; ++i) {
    b.X(i, 0) = 1.0; // top-left pixel
    b.labels.push_back(0);
  }
  Engine eng(14);
  Batch a = crop_flip(b, 0, eng);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    if (a.X(i, side - 1) == 1.0) {
      ++flipped;
    } else {
      ASSERT_EQ(a.X(i, 0), 1.0);
    }
  }
  EXPECT_NEAR(flipped / 10000.0, 0.5, 0.02);
}

TEST(CropFlip, ReproducibleAndRejectsNonSquare) {
  Batch b = make_batch(6, 16, 2, 15);
  Engine e1(15), e2(15);
  EXPECT_TRUE(same(crop_flip(b, 1, e1), crop_flip(b, 1, e2)));
  EXPECT_THROW(crop_flip(make_batch(2, 15, 2, 1), 1, e1), ShapeError);
}

TEST(LabelNoise, ZeroRateIsIdentity) {
  Batch b = make_batch(10, 2, 3, 16);
  Engine eng(16);
  EXPECT_TRUE(same(label_noise(b, 0.0, 3, eng), b));
}

TEST(LabelNoise, FullRateTwoClassesFlipsAll) {
  Batch b = make_batch(10, 2, 2, 17);
  Engine eng(17);
  Batch a = label_noise(b, 1.0, 2, eng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.labels[i], 1 - b.labels[i]);
}

TEST(LabelNoise, EmpiricalRateAndUniformOtherClass) {
  Batch b = make_batch(10000, 1, 4, 18);
  Engine eng(18);
  NoisyBatch a = label_noise_masked(b, 0.3, 4, eng);
  std::size_t flips = 0;
  std::vector<std::size_t> delta(4, 0);
  for (std::size_t i = 0; i < 10000; ++i) {
    const bool changed = a.batch.labels[i] != b.labels[i];
    EXPECT_EQ(changed, a.corrupted[i] == 1);
    flips += changed;
    ++delta[(a.batch.labels[i] + 4 - b.labels[i]) % 4];
  }
  EXPECT_NEAR(flips / 10000.0, 0.3, 0.02);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_NEAR(delta[k] / 10000.0, 0.1, 0.02);
}

TEST(LabelNoise, Errors) {
  Engine eng(1);
  Batch b = make_batch(3, 1, 1, 19);
  EXPECT_THROW(label_noise(b, 0.5, 1, eng), DomainError);
  EXPECT_THROW(label_noise(b, 1.5, 2, eng), DomainError);
}

TEST(AugmentPipelineTest, DeterministicAndShapePreserving) {
  AugmentPipeline p;
  AugmenterSpec j;
  j.kind = AugmentKind::kGaussianJitter;
  j.sigma = 0.2;
  AugmenterSpec n;
  n.kind = AugmentKind::kLabelNoise;
  n.rho = 0.5;
  p.stages = {j, n};
  Batch b = make_batch(20, 3, 3, 20);
  Engine e1(20), e2(20);
  NoisyBatch a = apply_pipeline(p, b, 3, e1), c = apply_pipeline(p, b, 3, e2);
  EXPECT_TRUE(same(a.batch, c.batch));
  EXPECT_EQ(a.corrupted, c.corrupted);
  EXPECT_EQ(a.batch.X.rows(), 20u);
  EXPECT_EQ(a.batch.X.cols(), 3u);
}

TEST(AugmentKindNames, RoundTrip) {
  for (AugmentKind k : {AugmentKind::kGaussianJitter, AugmentKind::kCropFlip, AugmentKind::kMixup,
                        AugmentKind::kCutmixTabular, AugmentKind::kLabelNoise})
    EXPECT_EQ(parse_augment_kind(to_string(k)), k);
  EXPECT_THROW(parse_augment_kind("rotate"), ConfigError);
}
