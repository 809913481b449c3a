#include <gtest/gtest.h>

#include <cmath>

#include "geomatch/errors.hpp"
#include "geomatch/random.hpp"
#include "geomatch/network.hpp"
#include "geomatch/pipeline.hpp"
#include "gradcheck.hpp"

namespace geomatch {
namespace {

Image random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, 3);
  for (auto& v : img.pixels) v = rng.uniform();
  return img;
}

TEST(ModelConfig, DeskShapes) {
  const auto c = ModelConfig::desk(TransformKind::kAffine);
  EXPECT_EQ(c.features.output_size(), 8);
  EXPECT_EQ(c.features.descriptor_dim(), 32);
  const auto [s1, s2] = c.regressor.spatial_chain(8);
  EXPECT_EQ(s1, 6);
  EXPECT_EQ(s2, 4);
  EXPECT_EQ(ModelConfig::tiny(TransformKind::kTps).features.output_size(), 4);
}

TEST(ModelConfig, SerializeRoundTrip) {
  auto c = ModelConfig::desk(TransformKind::kTps);
  c.matching = MatchingMode::kSubtract;
  c.freeze_features = true;
  c.features.center_input = false;
  EXPECT_EQ(ModelConfig::parse(c.serialize()), c);
  EXPECT_THROW(ModelConfig::parse("kind=banana\n"), InvalidArgument);
}

TEST(GeometryEstimator, FeaturesAreUnitNormPerLocation) {
  GeometryEstimator m(ModelConfig::desk(TransformKind::kAffine), 1);
  const Tensor f = m.extract_features(to_tensor(random_image(64, 2)));
  ASSERT_EQ(f.shape(), (Shape{1, 8, 8, 32}));
  for (std::size_t loc = 0; loc < 64; ++loc) {
    double s = 0;
    for (std::size_t c = 0; c < 32; ++c) s += f.values()[loc * 32 + c] * f.values()[loc * 32 + c];
    EXPECT_NEAR(s, 1, 1e-12);
  }
}

TEST(GeometryEstimator, ConstantImageGivesZeroFeatures) {
  // Bias-free layers after mean centering map a flat image to zero.
  GeometryEstimator m(ModelConfig::desk(TransformKind::kAffine), 1);
  const Tensor f = m.extract_features(to_tensor(Image(64, 64, 3, 0.4)));
  for (Scalar v : f.values()) EXPECT_EQ(v, 0);
}

TEST(GeometryEstimator, UntrainedHeadPredictsIdentity) {
  for (auto kind : {TransformKind::kAffine, TransformKind::kTps}) {
    GeometryEstimator m(ModelConfig::desk(kind), 3);
    const auto theta = m.estimate(random_image(64, 4), random_image(64, 5));
    EXPECT_EQ(to_vector(theta), to_vector(identity_transform(kind)));
  }
}

TEST(GeometryEstimator, SeedDeterminesWeights) {
  GeometryEstimator a(ModelConfig::desk(TransformKind::kAffine), 7, {false});
  GeometryEstimator b(ModelConfig::desk(TransformKind::kAffine), 7, {false});
  GeometryEstimator c(ModelConfig::desk(TransformKind::kAffine), 8, {false});
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto va = a.parameters()[i].tensor.values();
    const auto vb = b.parameters()[i].tensor.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
  }
  const auto w7 = a.parameter("features.conv1.weight").values();
  const auto w8 = c.parameter("features.conv1.weight").values();
  EXPECT_FALSE(std::equal(w7.begin(), w7.end(), w8.begin()));
}

TEST(GeometryEstimator, FullModelGradientCheck) {
  for (auto kind : {TransformKind::kAffine, TransformKind::kTps}) {
    GeometryEstimator m(ModelConfig::tiny(kind), 5, {false});
    Rng rng(6);
    const Tensor a = testing::random_tensor({2, 16, 16, 3}, rng, 0, 1, false);
    const Tensor b = testing::random_tensor({2, 16, 16, 3}, rng, 0, 1, false);
    std::vector<Tensor> params;
    for (const auto& p : m.parameters()) params.push_back(p.tensor);
    const auto r = testing::gradcheck(
        [&](const std::vector<Tensor>&) {
          return testing::random_projection(m.forward(a, b, NormMode::kTrain), 9);
        },
        params);
    EXPECT_LT(r.max_rel_error, 1e-4) << m.parameters()[r.worst_input].name;
  }
}

TEST(GeometryEstimator, FrozenFeaturesAreNotTrainable) {
  auto cfg = ModelConfig::tiny(TransformKind::kAffine);
  cfg.freeze_features = true;
  GeometryEstimator m(cfg, 1);
  for (const auto& p : m.trainable_parameters()) EXPECT_NE(p.name.rfind("features.", 0), 0u);
  EXPECT_LT(m.trainable_parameters().size(), m.parameters().size());
}

TEST(GeometryEstimator, SiameseBranchesShareWeights) {
  // Swapping the pair changes the output only through the matching layer:
  // features of A computed alone equal those inside the joint forward pass.
  GeometryEstimator m(ModelConfig::tiny(TransformKind::kAffine), 2, {false});
  const Image a = random_image(16, 1), b = random_image(16, 2);
  const Tensor fa = m.extract_features(to_tensor(a));
  const Tensor fb = m.extract_features(to_tensor(b));
  const Tensor direct = m.regress(match_features(MatchingMode::kCorrelation, fa, fb), NormMode::kEval);
  const Tensor joint = m.forward(to_tensor(a), to_tensor(b), NormMode::kEval);
  for (std::size_t i = 0; i < direct.numel(); ++i) EXPECT_EQ(direct.values()[i], joint.values()[i]);
}

TEST(GeometryEstimator, AllMatchingModesRun) {
  for (auto mode : {MatchingMode::kCorrelation, MatchingMode::kCorrelationUnnormalized,
                    MatchingMode::kConcat, MatchingMode::kSubtract}) {
    auto cfg = ModelConfig::tiny(TransformKind::kTps);
    cfg.matching = mode;
    GeometryEstimator m(cfg, 1, {false});
    const Tensor out = m.forward(to_tensor(random_image(16, 1)), to_tensor(random_image(16, 2)), NormMode::kTrain);
    EXPECT_EQ(out.shape(), (Shape{1, 18}));
  }
}

TEST(GeometryEstimator, WrongInputSizeThrows) {
  GeometryEstimator m(ModelConfig::tiny(TransformKind::kAffine), 1);
  EXPECT_THROW(m.extract_features(to_tensor(random_image(20, 1))), InvalidArgument);
  // estimate() resizes, so any resolution is accepted there.
  EXPECT_NO_THROW(m.estimate(random_image(20, 1), random_image(24, 2)));
}

TEST(Pipeline, EnsembleAveragesParameters) {
  const AffineParams a{1, 0.2, 0, 1, 0.1, 0};
  const AffineParams b{0.8, 0, 0.4, 1.2, -0.1, 0.2};
  const auto e = ensemble_affine(a, b);
  EXPECT_DOUBLE_EQ(e.a11, 0.9);
  EXPECT_DOUBLE_EQ(e.a12, 0.1);
  EXPECT_DOUBLE_EQ(e.a21, 0.2);
  EXPECT_DOUBLE_EQ(e.a22, 1.1);
  EXPECT_DOUBLE_EQ(e.tx, 0);
  EXPECT_DOUBLE_EQ(e.ty, 0.1);
}

TEST(Pipeline, UntrainedTwoStageIsIdentity) {
  GeometryEstimator aff(ModelConfig::tiny(TransformKind::kAffine), 1);
  GeometryEstimator tps(ModelConfig::tiny(TransformKind::kTps), 2);
  const auto r = estimate_two_stage(aff, tps, random_image(16, 3), random_image(16, 4));
  EXPECT_EQ(r.affine, AffineParams::identity());
  EXPECT_EQ(r.composed, TpsParams::identity());
  EXPECT_THROW(estimate_two_stage(tps, tps, random_image(16, 3), random_image(16, 4)), InvalidArgument);
}

TEST(FilterViz, PeakLandsOnUnflattenedPosition) {
  // 1x1 kernel over a 3x2 map, one filter: peak at channel k = 4 (row 1, col 1).
  Tensor w({1, 1, 6, 1}, {0.1, -0.2, 0.3, 0.0, 0.9, 0.2});
  const auto imgs = visualize_regressor_filters(w, 3, 2);
  ASSERT_EQ(imgs.size(), 1u);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) EXPECT_EQ(imgs[0].at(r, c, 0), (r == 1 && c == 1) ? 0.9 : 0.0);
  const Image shown = normalize_for_display(imgs[0]);
  EXPECT_EQ(shown.at(1, 1, 0), 1);
  EXPECT_EQ(normalize_for_display(Image(2, 2, 1, 0.3)).pixels, std::vector<Scalar>(4, 0));
}

}  // namespace
}  // namespace geomatch
