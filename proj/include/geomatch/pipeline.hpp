#pragma once

#include <span>

#include "geomatch/image.hpp"
#include "geomatch/network.hpp"
#include "geomatch/transforms.hpp"

namespace geomatch {

// Elementwise mean of the six parameters.
AffineParams ensemble_affine(const AffineParams& first, const AffineParams& second);

// extract -> correlate -> normalize -> regress for one pair.
TransformParams estimate_single_stage(GeometryEstimator& stage, const Image& image_a,
                                      const Image& image_b);

struct TwoStageResult {
  AffineParams affine;
  TpsParams refinement;
  // affine o refinement: maps image-B coordinates into image A.
  TpsParams composed;
  // Image A resampled by the affine estimate (the refinement stage's input).
  Image aligned_affine;
};

/// Coarse-to-fine estimate: the affine stage (or the mean of an ensemble of
/// affine stages) aligns A to B, the spline stage refines on the aligned pair,
/// and the two are composed.
TwoStageResult estimate_two_stage(std::span<GeometryEstimator* const> affine_stages,
                                  GeometryEstimator& tps_stage, const Image& image_a,
                                  const Image& image_b);
TwoStageResult estimate_two_stage(GeometryEstimator& affine_stage, GeometryEstimator& tps_stage,
                                  const Image& image_a, const Image& image_b);

// Affine-only estimate from one or more stages (averaged).
AffineParams estimate_affine(std::span<GeometryEstimator* const> affine_stages,
                             const Image& image_a, const Image& image_b);

}  // namespace geomatch
