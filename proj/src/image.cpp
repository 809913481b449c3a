#include "geomatch/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "geomatch/errors.hpp"

namespace geomatch {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

int reflect(int i, int n) {
  // Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, ...
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

Image::Image(int h, int w, int c, Scalar fill)
    : height(h), width(w), channels(c),
      pixels(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || c < 0) throw InvalidArgument("image: negative extent");
}

Point pixel_to_normalized(Scalar u, Scalar v, int width, int height) {
  return {Scalar(2) * (u + Scalar(0.5)) / width - Scalar(1),
          Scalar(2) * (v + Scalar(0.5)) / height - Scalar(1)};
}

Point normalized_to_pixel(Point p, int width, int height) {
  return {(p.x + Scalar(1)) * width / Scalar(2) - Scalar(0.5),
          (p.y + Scalar(1)) * height / Scalar(2) - Scalar(0.5)};
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open image " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> buffer;
  int h = 0, w = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  h = static_cast<int>(png_get_image_height(png, info));
  w = static_cast<int>(png_get_image_width(png, info));
  const auto rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(h));
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<Scalar>(buffer[i]) / Scalar(255);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw InvalidArgument("write_png: only 1 or 3 channel images are supported");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Scalar v = std::clamp(image.pixels[i], Scalar(0), Scalar(1));
    buffer[i] = static_cast<png_byte>(std::lround(v * 255));
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) rows[y] = buffer.data() + stride * y;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image quantize8(const Image& image) {
  Image out = image;
  for (auto& v : out.pixels) {
    v = static_cast<Scalar>(std::lround(std::clamp(v, Scalar(0), Scalar(1)) * 255)) / Scalar(255);
  }
  return out;
}

Tensor to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw InvalidArgument("to_batch: no images");
  const Image& first = *images.front();
  std::vector<Scalar> data;
  data.reserve(first.pixels.size() * images.size());
  for (const Image* img : images) {
    if (img->height != first.height || img->width != first.width ||
        img->channels != first.channels) {
      throw InvalidArgument("to_batch: images differ in size");
    }
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor({images.size(), static_cast<std::size_t>(first.height),
                 static_cast<std::size_t>(first.width), static_cast<std::size_t>(first.channels)},
                std::move(data));
}

Tensor to_tensor(const Image& image) {
  const Image* p = &image;
  return to_batch(std::span<const Image* const>(&p, 1));
}

Image center_crop(const Image& image, int height, int width) {
  if (height > image.height || width > image.width || height < 1 || width < 1) {
    throw InvalidArgument("center_crop: crop larger than image");
  }
  const int oy = (image.height - height) / 2;
  const int ox = (image.width - width) / 2;
  Image out(height, width, image.channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y + oy, x + ox, c);
    }
  }
  return out;
}

Image pad_symmetric(const Image& image, int pad_y, int pad_x) {
  Image out(image.height + 2 * pad_y, image.width + 2 * pad_x, image.channels);
  for (int y = 0; y < out.height; ++y) {
    const int sy = reflect(y - pad_y, image.height);
    for (int x = 0; x < out.width; ++x) {
      const int sx = reflect(x - pad_x, image.width);
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

}  // namespace geomatch
