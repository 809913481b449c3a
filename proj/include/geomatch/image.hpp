#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "geomatch/tensor.hpp"
#include "geomatch/transforms.hpp"

namespace geomatch {

/// Interleaved row-major image with float samples, nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<Scalar> pixels;

  Image() = default;
  Image(int h, int w, int c, Scalar fill = Scalar(0));

  Scalar& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  Scalar at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Pixel centers: column u maps to x = 2 (u + 0.5) / W - 1, row v to
// y = 2 (v + 0.5) / H - 1.
Point pixel_to_normalized(Scalar u, Scalar v, int width, int height);
// Inverse of pixel_to_normalized, returning (u, v) as a Point.
Point normalized_to_pixel(Point p, int width, int height);

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA) as RGB scaled to [0, 1].
Image read_png(const std::filesystem::path& path);
/// Writes 1 or 3 channels as 8-bit PNG after clamping to [0, 1] and rounding.
void write_png(const std::filesystem::path& path, const Image& image);

// Rounds every sample to the nearest of 256 levels, as a PNG round-trip would.
Image quantize8(const Image& image);

// Packs equally sized images into an N x H x W x C tensor.
Tensor to_batch(std::span<const Image* const> images);
Tensor to_tensor(const Image& image);

Image center_crop(const Image& image, int height, int width);
/// Mirror padding (edge pixel repeated, as in `symmetric` boundary mode).
Image pad_symmetric(const Image& image, int pad_y, int pad_x);

}  // namespace geomatch
