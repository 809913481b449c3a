#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "geomatch/errors.hpp"
#include "geomatch/synthgen.hpp"
#include "scratch_dir.hpp"

namespace geomatch {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TEST(Sampling, AffineDrawsStayInRange) {
  const SamplingRanges r;
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto s = sample_affine(r, rng);
    EXPECT_GE(s.scale, 0.5);
    EXPECT_LE(s.scale, 2.0);
    EXPECT_LE(std::abs(s.rotation), r.max_rotation);
    EXPECT_LE(std::abs(s.shear), r.max_shear);
    EXPECT_LE(std::abs(s.tx), r.max_translation);
    EXPECT_LE(std::abs(s.ty), r.max_translation);
  }
}

TEST(Sampling, AffineCompositionOrder) {
  const AffineSample s{1.5, 0.3, 0.1, 0.2, -0.1};
  const double c = std::cos(0.3), sn = std::sin(0.3);
  // scale * R * Shear, multiplied out by hand.
  const double m11 = 1.5 * c, m12 = 1.5 * (c * 0.1 - sn);
  const double m21 = 1.5 * sn, m22 = 1.5 * (sn * 0.1 + c);
  const auto a = s.to_params();
  EXPECT_DOUBLE_EQ(a.a11, m11);
  EXPECT_DOUBLE_EQ(a.a12, m12);
  EXPECT_DOUBLE_EQ(a.a21, m21);
  EXPECT_DOUBLE_EQ(a.a22, m22);
  EXPECT_NEAR(a.a11 * a.a22 - a.a12 * a.a21, 1.5 * 1.5, 1e-12);
}

TEST(Sampling, SplineJitterBounded) {
  SamplingRanges r;
  r.tps_jitter = 0.1;
  Rng rng(2);
  const auto id = TpsParams::identity();
  for (int i = 0; i < 100; ++i) {
    const auto t = sample_tps(r, rng);
    for (std::size_t k = 0; k < 18; ++k) EXPECT_LE(std::abs(t.coords[k] - id.coords[k]), 0.1);
  }
}

TEST(Synth, ZeroRangesGiveIdenticalViews) {
  const Image src = render_procedural_source(3, 80);
  const auto pair = generate_pair(src, TransformKind::kAffine, SamplingRanges::zero(), 4);
  EXPECT_EQ(pair.theta_gt, TransformParams(AffineParams::identity()));
  ASSERT_EQ(pair.image_a.height, 64);
  for (std::size_t i = 0; i < pair.image_a.pixels.size(); ++i)
    EXPECT_NEAR(pair.image_a.pixels[i], pair.image_b.pixels[i], 1e-12);
}

TEST(Synth, IntegerShiftReadsPaddedContext) {
  const int crop = 32, d = 5;
  const Image padded = padded_context(render_procedural_source(5, 48), crop);
  ASSERT_EQ(padded.height, 64);
  // One image-A pixel spans 2 / crop normalized units.
  const auto theta = AffineParams::translation(2.0 * d / crop, 0);
  const Image b = render_warped_view(padded, theta, crop);
  for (int v = 0; v < crop; ++v)
    for (int u = 0; u < crop; ++u)
      for (int c = 0; c < 3; ++c)
        ASSERT_NEAR(b.at(v, u, c), padded.at(v + crop / 2, u + crop / 2 + d, c), 1e-12);
}

TEST(Synth, AdmissibilityCheck) {
  EXPECT_TRUE(stays_inside_padding(AffineParams::identity(), 64));
  EXPECT_TRUE(stays_inside_padding(AffineParams::translation(0.9, 0.9), 64));
  EXPECT_FALSE(stays_inside_padding(AffineParams::translation(1.2, 0), 64));
  EXPECT_FALSE(stays_inside_padding(AffineParams{2.5, 0, 0, 2.5, 0, 0}, 64));
}

TEST(Synth, GeneratedTransformsAreAdmissible) {
  const Image src = render_procedural_source(6, 64);
  SynthConfig cfg;
  cfg.crop_size = 32;
  for (auto kind : {TransformKind::kAffine, TransformKind::kTps}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto pair = generate_pair(src, kind, SamplingRanges{}, seed, cfg);
      EXPECT_TRUE(stays_inside_padding(pair.theta_gt, 32));
      EXPECT_EQ(kind_of(pair.theta_gt), kind);
    }
  }
}

TEST(Synth, DeterministicInSeed) {
  const Image src = render_procedural_source(7, 80);
  const auto a = generate_pair(src, TransformKind::kTps, SamplingRanges{}, 11);
  const auto b = generate_pair(src, TransformKind::kTps, SamplingRanges{}, 11);
  const auto c = generate_pair(src, TransformKind::kTps, SamplingRanges{}, 12);
  EXPECT_EQ(a.theta_gt, b.theta_gt);
  EXPECT_EQ(a.image_b, b.image_b);
  EXPECT_NE(a.theta_gt, c.theta_gt);
}

TEST(Synth, ExhaustedRetriesThrow) {
  SamplingRanges r;
  r.tps_jitter = 5;
  SynthConfig cfg;
  cfg.max_retries = 3;
  EXPECT_THROW(generate_pair(render_procedural_source(8, 64), TransformKind::kTps, r, 1, cfg),
               GenerationError);
}

TEST(Synth, SmallSourceRejected) {
  EXPECT_THROW(padded_context(Image(30, 30, 3), 64), InvalidArgument);
}

TEST(Synth, GeneratePairsUsesSubSeeds) {
  std::vector<Image> sources{render_procedural_source(1, 64), render_procedural_source(2, 64)};
  SynthConfig cfg;
  cfg.crop_size = 32;
  const auto all = generate_pairs(sources, 5, TransformKind::kAffine, SamplingRanges{}, 9, cfg);
  const auto tail = generate_pairs(sources, 2, TransformKind::kAffine, SamplingRanges{}, 9, cfg, 3);
  EXPECT_EQ(all[3].theta_gt, tail[0].theta_gt);
  EXPECT_EQ(all[4].image_b, tail[1].image_b);
}

TEST(Dataset, SplitsAreDisjointAndReproducible) {
  const auto dir = testing::scratch_dir("synth_dataset");
  write_procedural_sources(dir / "src", 6, 1, 48);
  SynthConfig cfg;
  cfg.crop_size = 32;
  const auto m1 = generate_dataset(dir / "src", 8, 4, TransformKind::kAffine, SamplingRanges{},
                                   dir / "out1", 21, cfg);
  const auto m2 = generate_dataset(dir / "src", 8, 4, TransformKind::kAffine, SamplingRanges{},
                                   dir / "out2", 21, cfg);
  EXPECT_EQ(slurp(m1.path), slurp(m2.path));
  EXPECT_EQ(slurp(dir / "out1" / m1.records[9].image_b_path),
            slurp(dir / "out2" / m2.records[9].image_b_path));

  const auto train = m1.split("train");
  const auto val = m1.split("val");
  ASSERT_EQ(train.size(), 8u);
  ASSERT_EQ(val.size(), 4u);
  std::set<std::string> train_src, val_src;
  for (const auto& r : train) train_src.insert(r.source_id);
  for (const auto& r : val) val_src.insert(r.source_id);
  for (const auto& s : val_src) EXPECT_EQ(train_src.count(s), 0u) << s;

  const auto read = read_manifest(m1.path);
  ASSERT_EQ(read.records.size(), 12u);
  EXPECT_EQ(read.records[5].theta, m1.records[5].theta);
  EXPECT_EQ(read.records[10].split, "val");

  // Stored images match a fresh render from the recorded sub-seed.
  const auto& rec = read.records[2];
  const Image src = read_png(dir / "src" / rec.source_id);
  const auto fresh = generate_pair(src, rec.kind, SamplingRanges{}, derive_seed(rec.sub_seed, 1), cfg);
  EXPECT_EQ(to_vector(fresh.theta_gt), rec.theta);
  EXPECT_EQ(load_pair(read, rec).image_b, quantize8(fresh.image_b));
}

TEST(Dataset, MalformedManifestLine) {
  const auto dir = testing::scratch_dir("synth_bad_manifest");
  std::ofstream(dir / "manifest.jsonl") << R"({"pair_id":0,"image_A_path":"a","image_B_path":"b","kind":"affine","theta":[1,2]})"
                                        << "\n";
  EXPECT_THROW(read_manifest(dir / "manifest.jsonl"), IoError);
  EXPECT_THROW(read_manifest(dir / "missing.jsonl"), IoError);
}

}  // namespace
}  // namespace geomatch
