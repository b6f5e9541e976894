#pragma once

// 8-bit RGB and 16-bit grayscale PNG via libpng, plus binary PPM (P6).

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "synthprobe/errors.hpp"

namespace synthprobe {

struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int channels = 0;   // 1 or 3
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Rows are packed big-endian as libpng expects.
inline void png_write_raw(const std::filesystem::path& path, std::size_t width, std::size_t height, int color_type,
                          int bit_depth, const std::vector<std::uint8_t>& packed) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng: out of memory");
  }
  const std::size_t channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = width * channels * static_cast<std::size_t>(bit_depth / 8);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(packed.data() + y * stride);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng: failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png_rgb8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                           std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw DimensionError("write_png_rgb8: buffer size mismatch");
  detail::png_write_raw(path, width, height, PNG_COLOR_TYPE_RGB, 8, std::vector<std::uint8_t>(rgb.begin(), rgb.end()));
}

inline void write_png_gray16(const std::filesystem::path& path, std::size_t width, std::size_t height,
                             std::span<const std::uint16_t> gray) {
  if (gray.size() != width * height) throw DimensionError("write_png_gray16: buffer size mismatch");
  std::vector<std::uint8_t> packed;
  packed.reserve(gray.size() * 2);
  for (std::uint16_t v : gray) {
    packed.push_back(static_cast<std::uint8_t>(v >> 8));
    packed.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  detail::png_write_raw(path, width, height, PNG_COLOR_TYPE_GRAY, 16, packed);
}

/// Reads 8-bit RGB or 8/16-bit grayscale PNGs without any color conversion.
inline RasterImage read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng: out of memory");
  }
  RasterImage img;
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng: failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_RGB && img.bit_depth == 8) {
    img.channels = 3;
  } else if (color_type == PNG_COLOR_TYPE_GRAY && (img.bit_depth == 8 || img.bit_depth == 16)) {
    img.channels = 1;
  } else {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": unsupported PNG layout");
  }
  const std::size_t bytes_per = static_cast<std::size_t>(img.bit_depth / 8);
  const std::size_t stride = img.width * static_cast<std::size_t>(img.channels) * bytes_per;
  buffer.resize(stride * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img.samples.resize(img.width * img.height * static_cast<std::size_t>(img.channels));
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    img.samples[i] = bytes_per == 2 ? static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]) : buffer[i];
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw DimensionError("write_ppm: buffer size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace synthprobe
