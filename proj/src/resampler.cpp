#include "geomatch/resampler.hpp"

#include <algorithm>
#include <cmath>

#include "geomatch/errors.hpp"

namespace geomatch {

namespace {

// Coordinates within this distance of an integer are treated as exact pixel
// centers, so identity and integer shifts reproduce pixels bit for bit.
constexpr Scalar kSnap = Scalar(1e-9);

Scalar snap(Scalar v) {
  const Scalar r = std::round(v);
  return std::abs(v - r) < kSnap ? r : v;
}

Scalar tap(const Image& image, int x, int y, int c) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return 0;
  return image.at(y, x, c);
}

}  // namespace

Scalar sample(const Image& image, Scalar u, Scalar v, int channel, Interpolation mode) {
  u = snap(u);
  v = snap(v);
  if (mode == Interpolation::kNearest) {
    return tap(image, static_cast<int>(std::lround(u)), static_cast<int>(std::lround(v)), channel);
  }
  const Scalar fu = std::floor(u);
  const Scalar fv = std::floor(v);
  const Scalar du = u - fu;
  const Scalar dv = v - fv;
  const int x0 = static_cast<int>(fu);
  const int y0 = static_cast<int>(fv);
  if (du == 0 && dv == 0) return tap(image, x0, y0, channel);
  return (1 - dv) * ((1 - du) * tap(image, x0, y0, channel) + du * tap(image, x0 + 1, y0, channel)) +
         dv * ((1 - du) * tap(image, x0, y0 + 1, channel) + du * tap(image, x0 + 1, y0 + 1, channel));
}

Image warp_by(const Image& image, const std::function<Point(Point)>& mapping, int out_height,
              int out_width, Interpolation mode) {
  if (out_height < 1 || out_width < 1) throw InvalidArgument("warp: output size must be >= 1x1");
  Image out(out_height, out_width, image.channels);
  for (int v = 0; v < out_height; ++v) {
    for (int u = 0; u < out_width; ++u) {
      const Point src = mapping(pixel_to_normalized(u, v, out_width, out_height));
      const Point px = normalized_to_pixel(src, image.width, image.height);
      for (int c = 0; c < image.channels; ++c) out.at(v, u, c) = sample(image, px.x, px.y, c, mode);
    }
  }
  return out;
}

Image warp(const Image& image, const TransformParams& theta, int out_height, int out_width,
           Interpolation mode) {
  if (const auto* a = std::get_if<AffineParams>(&theta)) {
    const AffineParams affine = *a;
    return warp_by(image, [&affine](Point p) { return affine.apply(p); }, out_height, out_width,
                   mode);
  }
  const auto& tps = std::get<TpsParams>(theta);
  return warp_by(image, [&tps](Point p) { return apply_transform(tps, p); }, out_height,
                 out_width, mode);
}

Image resize(const Image& image, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw InvalidArgument("resize: output size must be >= 1x1");
  if (out_height == image.height && out_width == image.width) return image;
  Image out(out_height, out_width, image.channels);
  const Scalar sy = static_cast<Scalar>(image.height) / out_height;
  const Scalar sx = static_cast<Scalar>(image.width) / out_width;
  for (int v = 0; v < out_height; ++v) {
    const Scalar y = std::clamp((v + Scalar(0.5)) * sy - Scalar(0.5), Scalar(0),
                                static_cast<Scalar>(image.height - 1));
    for (int u = 0; u < out_width; ++u) {
      const Scalar x = std::clamp((u + Scalar(0.5)) * sx - Scalar(0.5), Scalar(0),
                                  static_cast<Scalar>(image.width - 1));
      for (int c = 0; c < image.channels; ++c) out.at(v, u, c) = sample(image, x, y, c);
    }
  }
  return out;
}

}  // namespace geomatch
