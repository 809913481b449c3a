#include "geomatch/pipeline.hpp"

#include "geomatch/errors.hpp"
#include "geomatch/resampler.hpp"

namespace geomatch {

AffineParams ensemble_affine(const AffineParams& first, const AffineParams& second) {
  const auto a = first.to_array();
  const auto b = second.to_array();
  std::array<Scalar, 6> m{};
  for (std::size_t i = 0; i < 6; ++i) m[i] = (a[i] + b[i]) / 2;
  return AffineParams::from_array(m);
}

TransformParams estimate_single_stage(GeometryEstimator& stage, const Image& image_a,
                                      const Image& image_b) {
  return stage.estimate(image_a, image_b);
}

AffineParams estimate_affine(std::span<GeometryEstimator* const> affine_stages,
                             const Image& image_a, const Image& image_b) {
  if (affine_stages.empty()) throw InvalidArgument("estimate_affine: no affine stage given");
  std::array<Scalar, 6> acc{};
  for (GeometryEstimator* stage : affine_stages) {
    if (stage->config().kind != TransformKind::kAffine) {
      throw InvalidArgument("estimate_affine: stage does not regress an affine transform");
    }
    const auto theta = std::get<AffineParams>(stage->estimate(image_a, image_b)).to_array();
    for (std::size_t i = 0; i < 6; ++i) acc[i] += theta[i];
  }
  for (auto& v : acc) v /= static_cast<Scalar>(affine_stages.size());
  return AffineParams::from_array(acc);
}

TwoStageResult estimate_two_stage(std::span<GeometryEstimator* const> affine_stages,
                                  GeometryEstimator& tps_stage, const Image& image_a,
                                  const Image& image_b) {
  if (tps_stage.config().kind != TransformKind::kTps) {
    throw InvalidArgument("estimate_two_stage: refinement stage must regress a TPS");
  }
  TwoStageResult r;
  r.affine = estimate_affine(affine_stages, image_a, image_b);
  r.aligned_affine = warp(image_a, r.affine, image_a.height, image_a.width);
  r.refinement = std::get<TpsParams>(tps_stage.estimate(r.aligned_affine, image_b));
  r.composed = std::get<TpsParams>(compose(r.affine, r.refinement));
  return r;
}

TwoStageResult estimate_two_stage(GeometryEstimator& affine_stage, GeometryEstimator& tps_stage,
                                  const Image& image_a, const Image& image_b) {
  GeometryEstimator* stages[] = {&affine_stage};
  return estimate_two_stage(stages, tps_stage, image_a, image_b);
}

}  // namespace geomatch
