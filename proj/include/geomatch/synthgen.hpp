#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geomatch/image.hpp"
#include "geomatch/random.hpp"
#include "geomatch/transforms.hpp"

namespace geomatch {

/// Ranges for random ground-truth transforms, in normalized units.
struct SamplingRanges {
  // Log-uniform scale in [1 / max_scale, max_scale].
  Scalar max_scale = 2;
  Scalar max_rotation = std::numbers::pi_v<Scalar> / 6;
  Scalar max_shear = Scalar(0.2);
  Scalar max_translation = Scalar(0.25);
  // Independent uniform offset of each TPS control point, per axis.
  Scalar tps_jitter = Scalar(0.25);

  static SamplingRanges zero() { return {1, 0, 0, 0, 0}; }
};

/// Decomposed affine draw: A = scale * R(rotation) * [[1, shear], [0, 1]],
/// plus translation.
struct AffineSample {
  Scalar scale = 1, rotation = 0, shear = 0, tx = 0, ty = 0;
  AffineParams to_params() const;
};

AffineSample sample_affine(const SamplingRanges& ranges, Rng& rng);
TpsParams sample_tps(const SamplingRanges& ranges, Rng& rng);

struct SynthConfig {
  int crop_size = 64;
  int max_retries = 200;
};

struct TrainingPair {
  Image image_a;
  Image image_b;
  TransformParams theta_gt;
  std::string source_id;
  std::uint64_t seed = 0;
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& what, TransformParams theta)
      : std::runtime_error(what), theta_(std::move(theta)) {}
  const TransformParams& theta() const { return theta_; }

 private:
  TransformParams theta_;
};

/// The crop-size window of the source, padded symmetrically by half the crop
/// size on every side. Image A is its central crop.
Image padded_context(const Image& source, int crop_size);

/// Image B: the padded context inverse-warped by theta, where theta maps
/// image-B coordinates to image-A coordinates (the padded context spans
/// [-2, 2]^2 in image-A units).
Image render_warped_view(const Image& padded, const TransformParams& theta, int crop_size);

/// True when theta maps every image-B pixel into the interior of the padded
/// context, so no zero-padded sample enters image B.
bool stays_inside_padding(const TransformParams& theta, int crop_size);

/// Draws theta (retrying when it would leave the padded context) and renders
/// the pair. Deterministic in `seed`. Throws GenerationError after
/// `max_retries` rejected draws.
TrainingPair generate_pair(const Image& source, TransformKind kind, const SamplingRanges& ranges,
                           std::uint64_t seed, const SynthConfig& config = {},
                           std::string source_id = {});

/// Pairs drawn from `sources`; pair i uses sub-seed derive_seed(seed, first_id + i),
/// so any subset can be regenerated independently.
std::vector<TrainingPair> generate_pairs(std::span<const Image> sources, std::size_t count,
                                         TransformKind kind, const SamplingRanges& ranges,
                                         std::uint64_t seed, const SynthConfig& config = {},
                                         std::uint64_t first_id = 0);

struct ManifestRecord {
  std::uint64_t pair_id = 0;
  std::string split;
  std::string image_a_path;
  std::string image_b_path;
  TransformKind kind = TransformKind::kAffine;
  std::vector<Scalar> theta;
  std::uint64_t sub_seed = 0;
  std::string source_id;

  TransformParams transform() const { return from_vector(kind, theta); }
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& name) const;
};

/// Writes train/ and val/ PNG pairs plus manifest.jsonl (one JSON object per
/// line). Train and validation draw from disjoint subsets of the sources.
Manifest generate_dataset(const std::filesystem::path& source_dir, std::size_t n_train,
                          std::size_t n_val, TransformKind kind, const SamplingRanges& ranges,
                          const std::filesystem::path& out_dir, std::uint64_t seed,
                          const SynthConfig& config = {});

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
// Loads a record's image pair, resolving paths relative to the manifest.
TrainingPair load_pair(const Manifest& manifest, const ManifestRecord& record);

/// Deterministic synthetic scene (gradient background, textured shapes) used
/// as stand-in source imagery.
Image render_procedural_source(std::uint64_t seed, int size);
void write_procedural_sources(const std::filesystem::path& dir, std::size_t count,
                              std::uint64_t seed, int size);

}  // namespace geomatch
