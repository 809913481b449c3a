#include <gtest/gtest.h>

#include <cmath>

#include "geomatch/errors.hpp"
#include "geomatch/matching.hpp"
#include "gradcheck.hpp"

namespace geomatch {
namespace {

using testing::gradcheck;
using testing::random_projection;
using testing::random_tensor;

// c(i, j, k) with k = h * (j_k - 1) + i_k in one-based indices.
Scalar naive_correlation(const Tensor& fa, const Tensor& fb, std::size_t i, std::size_t j,
                         std::size_t k) {
  const std::size_t h = fa.dim(0), d = fa.dim(2);
  const std::size_t jk1 = (k + 1 + h - 1) / h;   // ceil((k+1)/h), one-based column
  const std::size_t ik1 = (k + 1) - h * (jk1 - 1);  // one-based row
  Scalar s = 0;
  for (std::size_t c = 0; c < d; ++c) s += fb.at({i, j, c}) * fa.at({ik1 - 1, jk1 - 1, c});
  return s;
}

TEST(Correlate, MatchesNaiveLoopOnRandomShapes) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 1 + rng.index(6), w = 1 + rng.index(6), d = 1 + rng.index(8);
    Tensor fa = random_tensor({h, w, d}, rng);
    Tensor fb = random_tensor({h, w, d}, rng);
    const Tensor c = correlate(fa, fb);
    ASSERT_EQ(c.shape(), (Shape{h, w, h * w}));
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t k = 0; k < h * w; ++k)
          EXPECT_NEAR(c.at({i, j, k}), naive_correlation(fa, fb, i, j, k), 1e-12);
  }
}

TEST(Correlate, FlattenIsColumnMajor) {
  EXPECT_EQ(flatten_position(2, 0, 4), 2u);
  EXPECT_EQ(flatten_position(0, 1, 4), 4u);
  EXPECT_EQ(flatten_position(3, 2, 4), 11u);
  const auto [r, c] = unflatten_position(11, 4);
  EXPECT_EQ(r, 3u);
  EXPECT_EQ(c, 2u);
}

TEST(Correlate, OneHotFeaturesLocateMatches) {
  // Feature at A(r, c) is one-hot at its own flat index; B copies A(2, 1).
  const std::size_t h = 3, w = 2, d = h * w;
  Tensor fa = Tensor::zeros({h, w, d});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      fa.mutable_values()[(r * w + c) * d + flatten_position(r, c, h)] = 1;
  Tensor fb = Tensor::zeros({h, w, d});
  fb.mutable_values()[(0 * w + 0) * d + flatten_position(2, 1, h)] = 1;
  const Tensor c = correlate(fa, fb);
  for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(c.at({0, 0, k}), k == flatten_position(2, 1, h) ? 1 : 0);
}

TEST(Correlate, BatchedAgreesWithSingle) {
  Rng rng(22);
  Tensor fa = random_tensor({2, 3, 4, 5}, rng);
  Tensor fb = random_tensor({2, 3, 4, 5}, rng);
  const Tensor c = correlate(fa, fb);
  for (std::size_t n = 0; n < 2; ++n) {
    const std::size_t per = 3 * 4 * 5;
    Tensor a({3, 4, 5}, {fa.values().begin() + n * per, fa.values().begin() + (n + 1) * per});
    Tensor b({3, 4, 5}, {fb.values().begin() + n * per, fb.values().begin() + (n + 1) * per});
    const Tensor s = correlate(a, b);
    for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(c.values()[n * s.numel() + i], s.values()[i]);
  }
}

TEST(Correlate, ShapeMismatchThrows) {
  EXPECT_THROW(correlate(Tensor::zeros({2, 2, 3}), Tensor::zeros({2, 3, 3})), InvalidArgument);
}

TEST(Correlate, Gradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto fa = random_tensor({2, 3, 4}, rng);
    auto fb = random_tensor({2, 3, 4}, rng);
    EXPECT_LT(gradcheck([](const auto& t) { return random_projection(correlate(t[0], t[1]), 3); }, {fa, fb}).max_rel_error, 1e-4);
  }
}

TEST(NormalizeCorrespondences, UnitOrZeroNorm) {
  Rng rng(23);
  Tensor c = random_tensor({3, 3, 9}, rng);
  // One location with no positive score.
  for (std::size_t k = 0; k < 9; ++k) c.mutable_values()[k] = -std::abs(c.values()[k]);
  const Tensor n = normalize_correspondences(c);
  for (std::size_t loc = 0; loc < 9; ++loc) {
    double s = 0;
    for (std::size_t k = 0; k < 9; ++k) {
      const Scalar v = n.values()[loc * 9 + k];
      EXPECT_GE(v, 0);
      s += v * v;
    }
    EXPECT_NEAR(s, loc == 0 ? 0 : 1, 1e-12);
  }
}

TEST(Matching, ConcatAndSubtract) {
  Tensor fa({1, 1, 2}, {1, 2});
  Tensor fb({1, 1, 2}, {5, 7});
  const std::vector<Scalar> cat{5, 7, 1, 2};
  const Tensor c = match_concat(fa, fb);
  EXPECT_EQ(std::vector<Scalar>(c.values().begin(), c.values().end()), cat);
  const Tensor d = match_subtract(fa, fb);
  EXPECT_EQ(d.values()[0], 4);
  EXPECT_EQ(d.values()[1], 5);
  EXPECT_EQ(matching_channels(MatchingMode::kConcat, 3, 4, 5), 10u);
  EXPECT_EQ(matching_channels(MatchingMode::kCorrelation, 3, 4, 5), 12u);
  EXPECT_EQ(parse_matching_mode(to_string(MatchingMode::kSubtract)), MatchingMode::kSubtract);
}

}  // namespace
}  // namespace geomatch
