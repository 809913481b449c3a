#pragma once

#include <functional>

#include "geomatch/image.hpp"
#include "geomatch/transforms.hpp"

namespace geomatch {

enum class Interpolation { kBilinear, kNearest };

/// Sample at continuous pixel coordinates (u, v); taps outside the image read
/// as zero.
Scalar sample(const Image& image, Scalar u, Scalar v, int channel,
              Interpolation mode = Interpolation::kBilinear);

/// Inverse warp: output pixel at normalized location x receives the sample of
/// `image` at mapping(x). Not differentiable.
Image warp_by(const Image& image, const std::function<Point(Point)>& mapping, int out_height,
              int out_width, Interpolation mode = Interpolation::kBilinear);

Image warp(const Image& image, const TransformParams& theta, int out_height, int out_width,
           Interpolation mode = Interpolation::kBilinear);

// Bilinear resize with pixel-center alignment; border taps clamp to the edge.
Image resize(const Image& image, int out_height, int out_width);

}  // namespace geomatch
