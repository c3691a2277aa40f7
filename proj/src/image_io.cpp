#include "rddpm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace rddpm {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

float to_unit(std::uint8_t p) { return 2.0f * static_cast<float>(p) / 255.0f - 1.0f; }

std::uint8_t from_unit(float v) {
  const float clamped = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround((clamped + 1.0f) * 127.5f));
}

}  // namespace

ImageTensor read_png(const std::filesystem::path& path, int channels) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open PNG: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unreadable PNG: " + path.string());
  }

  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int stored = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> pixels(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const int out_channels = channels == 0 ? stored : channels;
  if (out_channels != 1 && out_channels != 3) {
    throw std::invalid_argument("read_png: channels must be 0, 1 or 3");
  }
  ImageTensor image(Shape{out_channels, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px = rows[y] + static_cast<std::size_t>(x) * stored;
      if (out_channels == stored) {
        for (int c = 0; c < stored; ++c) image.at(c, y, x) = to_unit(px[c]);
      } else if (out_channels == 1) {
        const double luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        image.at(0, y, x) = static_cast<float>(2.0 * luma / 255.0 - 1.0);
      } else {
        for (int c = 0; c < 3; ++c) image.at(c, y, x) = to_unit(px[0]);
      }
    }
  }
  return image;
}

std::vector<std::uint8_t> to_pixels(const ImageTensor& image) {
  const Shape& s = image.shape();
  std::vector<std::uint8_t> out(s.size());
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      for (int c = 0; c < s.channels; ++c) {
        out[(static_cast<std::size_t>(y) * s.width + x) * s.channels + c] = from_unit(image.at(c, y, x));
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  const Shape& s = image.shape();
  if (s.channels != 1 && s.channels != 3) {
    throw std::invalid_argument("write_png: only 1- or 3-channel images are supported");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write PNG: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, s.width, s.height, 8,
               s.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> pixels = to_pixels(image);
  const std::size_t stride = static_cast<std::size_t>(s.width) * s.channels;
  for (int y = 0; y < s.height; ++y) png_write_row(png, pixels.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
  const Shape& s = image.shape();
  if (s.height == height && s.width == width) return image;
  ImageTensor out(Shape{s.channels, height, width});
  const double sy = static_cast<double>(s.height) / height;
  const double sx = static_cast<double>(s.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, s.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, s.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < s.channels; ++c) {
        const double top = (1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
        const double bottom = (1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

ImageTensor normalize_for_display(const ImageTensor& image) {
  auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  ImageTensor out = image;
  const float range = *hi - *lo;
  for (float& v : out.data()) v = range > 0 ? 2.0f * (v - *lo) / range - 1.0f : -1.0f;
  return out;
}

}  // namespace rddpm
