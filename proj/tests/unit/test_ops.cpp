#include <gtest/gtest.h>

#include <cmath>

#include "geomatch/errors.hpp"
#include "geomatch/ops.hpp"
#include "gradcheck.hpp"

namespace geomatch {
namespace {

using testing::gradcheck;
using testing::random_projection;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

// Six nested loops, NHWC input, KKIO kernel.
std::vector<Scalar> naive_conv(const Tensor& in, const Tensor& k, int stride, int pad) {
  const int n = static_cast<int>(in.dim(0)), h = static_cast<int>(in.dim(1)),
            w = static_cast<int>(in.dim(2)), ci = static_cast<int>(in.dim(3));
  const int kk = static_cast<int>(k.dim(0)), co = static_cast<int>(k.dim(3));
  const int oh = (h + 2 * pad - kk) / stride + 1, ow = (w + 2 * pad - kk) / stride + 1;
  std::vector<Scalar> out(static_cast<std::size_t>(n) * oh * ow * co, 0);
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int o = 0; o < co; ++o) {
          Scalar s = 0;
          for (int dy = 0; dy < kk; ++dy)
            for (int dx = 0; dx < kk; ++dx) {
              const int iy = y * stride - pad + dy, ix = x * stride - pad + dx;
              if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
              for (int c = 0; c < ci; ++c) s += in.at({std::size_t(b), std::size_t(iy), std::size_t(ix), std::size_t(c)}) *
                                                k.at({std::size_t(dy), std::size_t(dx), std::size_t(c), std::size_t(o)});
            }
          out[((static_cast<std::size_t>(b) * oh + y) * ow + x) * co + o] = s;
        }
  return out;
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(1);
  struct Case { int n, h, w, ci, co, k, stride, pad; };
  for (const Case c : {Case{1, 5, 5, 1, 1, 3, 1, 0}, Case{2, 7, 6, 3, 4, 3, 2, 1},
                       Case{1, 8, 8, 2, 5, 2, 2, 0}, Case{3, 6, 9, 4, 2, 5, 1, 2}}) {
    Tensor in = random_tensor({std::size_t(c.n), std::size_t(c.h), std::size_t(c.w), std::size_t(c.ci)}, rng);
    Tensor k = random_tensor({std::size_t(c.k), std::size_t(c.k), std::size_t(c.ci), std::size_t(c.co)}, rng);
    const Tensor out = conv2d(in, k, c.stride, c.pad);
    const auto ref = naive_conv(in, k, c.stride, c.pad);
    ASSERT_EQ(out.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.values()[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, Rank3InputGivesRank3Output) {
  Rng rng(2);
  Tensor in = random_tensor({5, 5, 2}, rng);
  Tensor k = random_tensor({3, 3, 2, 4}, rng);
  EXPECT_EQ(conv2d(in, k).shape(), (Shape{3, 3, 4}));
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor in = Tensor::zeros({1, 4, 4, 2});
  Tensor k = Tensor::zeros({3, 3, 3, 1});
  EXPECT_THROW(conv2d(in, k), InvalidArgument);
}

TEST(Gradients, ElementwiseOps) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto bias = random_tensor({4}, rng);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(add(in[0], in[1]), 9); }, {a, b}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(sub(in[0], in[1]), 9); }, {a, b}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(mul(in[0], in[1]), 9); }, {a, b}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(scale(in[0], -1.5), 9); }, {a}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(add_bias(in[0], in[1]), 9); }, {a, bias}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return mean(mul(in[0], in[0])); }, {a}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(reshape(in[0], {2, 6}), 9); }, {a}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(concat_last(in[0], in[1]), 9); }, {a, b}).max_rel_error, kGradTol);
  }
}

TEST(Gradients, ReluAwayFromKink) {
  Rng rng(3);
  auto a = random_tensor({20}, rng);
  // Keep every entry at least 0.1 from the kink.
  for (auto& v : a.mutable_values()) v = v >= 0 ? v + 0.1 : v - 0.1;
  EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(relu(in[0]), 4); }, {a}).max_rel_error, kGradTol);
}

TEST(Gradients, MatmulAndLinear) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({5, 2}, rng);
    auto bias = random_tensor({2}, rng);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(matmul(in[0], in[1]), 1); }, {a, b}).max_rel_error, kGradTol);
    EXPECT_LT(gradcheck([&](const auto& in) { return random_projection(linear(in[0], in[1], in[2]), 1); }, {a, b, bias}).max_rel_error, kGradTol);
  }
}

TEST(Gradients, Conv2d) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    auto in = random_tensor({2, 6, 5, 3}, rng);
    auto k = random_tensor({3, 3, 3, 2}, rng);
    const int stride = 1 + static_cast<int>(seed % 2);
    const int pad = static_cast<int>(seed / 2);
    auto r = gradcheck([&](const auto& t) { return random_projection(conv2d(t[0], t[1], stride, pad), 5); }, {in, k});
    EXPECT_LT(r.max_rel_error, kGradTol) << "seed " << seed;
  }
}

TEST(Gradients, BatchnormTrainMode) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    auto in = random_tensor({3, 2, 2, 3}, rng);
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng);
    auto r = gradcheck(
        [&](const auto& t) {
          RunningStats stats = RunningStats::identity(3);
          return random_projection(batchnorm(t[0], t[1], t[2], stats, NormMode::kTrain), 6);
        },
        {in, gamma, beta});
    EXPECT_LT(r.max_rel_error, kGradTol) << "seed " << seed;
  }
}

TEST(Gradients, L2Normalize) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto in = random_tensor({2, 3, 4}, rng);
    for (std::size_t axis : {0u, 2u}) {
      auto r = gradcheck([&](const auto& t) { return random_projection(l2_normalize(t[0], axis), 8); }, {in});
      EXPECT_LT(r.max_rel_error, kGradTol);
    }
  }
}

TEST(Batchnorm, TrainModeStatistics) {
  // Per-channel mean 0 and variance var / (var + eps) after normalization.
  Rng rng(4);
  auto in = random_tensor({4, 3, 3, 2}, rng, -2, 3, false);
  Tensor gamma({2}, {1, 1});
  Tensor beta({2}, {0, 0});
  RunningStats stats = RunningStats::identity(2);
  const Tensor out = batchnorm(in, gamma, beta, stats, NormMode::kTrain);
  const std::size_t rows = in.numel() / 2;
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, m_in = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      m += out.values()[r * 2 + c];
      m_in += in.values()[r * 2 + c];
    }
    m /= rows;
    m_in /= rows;
    double v = 0, v_in = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      v += std::pow(out.values()[r * 2 + c] - m, 2);
      v_in += std::pow(in.values()[r * 2 + c] - m_in, 2);
    }
    v /= rows;
    v_in /= rows;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, v_in / (v_in + kBatchNormEpsilon), 1e-12);
    // Running stats: 0.9 * identity + 0.1 * batch (biased variance).
    EXPECT_NEAR(stats.mean[c], 0.1 * m_in, 1e-12);
    EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * v_in, 1e-12);
  }
}

TEST(Batchnorm, EvalModeUsesRunningStats) {
  Tensor in({2, 1}, {3, 5});
  Tensor gamma({1}, {2});
  Tensor beta({1}, {1});
  RunningStats stats{{1}, {4}};
  const Tensor out = batchnorm(in, gamma, beta, stats, NormMode::kEval);
  EXPECT_NEAR(out.values()[0], 2 * (3 - 1) / std::sqrt(4 + kBatchNormEpsilon) + 1, 1e-12);
  EXPECT_NEAR(out.values()[1], 2 * (5 - 1) / std::sqrt(4 + kBatchNormEpsilon) + 1, 1e-12);
  EXPECT_EQ(stats.mean[0], 1);
  EXPECT_EQ(stats.var[0], 4);
}

TEST(L2Normalize, UnitNormAndZeroSlices) {
  Tensor in({2, 3}, {3, 0, 4, 0, 0, 0});
  const Tensor out = l2_normalize(in, 1);
  EXPECT_DOUBLE_EQ(out.values()[0], 0.6);
  EXPECT_DOUBLE_EQ(out.values()[2], 0.8);
  for (int i = 3; i < 6; ++i) EXPECT_EQ(out.values()[i], 0);
}

TEST(SgdStep, ScalarTrajectoryMatchesRecurrence) {
  // Hand-unrolled: v1 = -lr g0, p1 = p0 + v1, v2 = m v1 - lr (g1 + wd p1) ...
  std::vector<Scalar> p{1.0}, v{0.0};
  const Scalar lr = 0.1, m = 0.9, wd = 0.01;
  Scalar ref_p = 1.0, ref_v = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Scalar g = 2 * p[0];  // d/dp p^2
    const std::vector<Scalar> grad{g};
    sgd_step(p, grad, lr, m, v, wd);
    ref_v = m * ref_v - lr * (2 * ref_p + wd * ref_p);
    ref_p = ref_p + ref_v;
    EXPECT_DOUBLE_EQ(p[0], ref_p);
    EXPECT_DOUBLE_EQ(v[0], ref_v);
  }
}

TEST(SgdStep, ZeroLearningRateLeavesParams) {
  std::vector<Scalar> p{1.5, -2}, v{0, 0};
  const std::vector<Scalar> g{3, 4};
  sgd_step(p, g, 0, 0.9, v);
  EXPECT_EQ(p[0], 1.5);
  EXPECT_EQ(p[1], -2);
}

TEST(SgdStep, RejectsBadHyperparameters) {
  std::vector<Scalar> p{1}, v{0};
  const std::vector<Scalar> g{1};
  EXPECT_THROW(sgd_step(p, g, -1, 0.9, v), InvalidArgument);
  EXPECT_THROW(sgd_step(p, g, 0.1, 1.0, v), InvalidArgument);
}

}  // namespace
}  // namespace geomatch
