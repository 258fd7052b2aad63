#pragma once

#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "moss/error.hpp"

namespace moss::render {

/// Interleaved 8-bit image, row-major, `channels` per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t* at(int row, int col) { return data.data() + (static_cast<std::size_t>(row) * width + col) * channels; }
  const std::uint8_t* at(int row, int col) const {
    return data.data() + (static_cast<std::size_t>(row) * width + col) * channels;
  }
  bool operator==(const Image&) const = default;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_silent_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
inline void png_silent_warning(png_structp, png_const_charp) {}

// Plain C frames only: libpng reports errors by longjmp.
inline bool png_write_rows(std::FILE* fp, int w, int h, int color_type, int bit_depth, png_bytep const* rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_silent_error, png_silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);  // rows hold native little-endian uint16
  png_write_image(png, const_cast<png_bytepp>(rows));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct PngHeader {
  png_uint_32 width = 0, height = 0;
  int color_type = 0, bit_depth = 0;
};

/// Reads the whole file into `pixels` as rows of the requested layout.
/// want_rgb8: convert palette/gray/alpha to 8-bit RGB; otherwise expect 16-bit gray.
/// Buffers are owned by the caller so nothing with a destructor lives in this frame.
inline bool png_read_all(std::FILE* fp, bool want_rgb8, PngHeader& hdr, std::vector<std::uint8_t>& pixels,
                         std::vector<png_bytep>& rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_silent_error, png_silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  hdr.width = png_get_image_width(png, info);
  hdr.height = png_get_image_height(png, info);
  hdr.color_type = png_get_color_type(png, info);
  hdr.bit_depth = png_get_bit_depth(png, info);
  if (want_rgb8) {
    if (hdr.bit_depth == 16) png_set_strip_16(png);
    if (hdr.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (hdr.color_type == PNG_COLOR_TYPE_GRAY && hdr.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (hdr.color_type == PNG_COLOR_TYPE_GRAY || hdr.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (hdr.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  } else {
    if (hdr.color_type != PNG_COLOR_TYPE_GRAY || hdr.bit_depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      return false;
    }
    if (std::endian::native == std::endian::little) png_set_swap(png);
  }
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.assign(stride * hdr.height, 0);
  rows.resize(hdr.height);
  for (png_uint_32 r = 0; r < hdr.height; ++r) rows[r] = pixels.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string(), {path.string()});
  return f;
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3 && img.channels != 1) throw InvalidInput("write_png: 1 or 3 channels required");
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r) rows[r] = const_cast<png_bytep>(img.at(r, 0));
  auto f = detail::open_file(path, "wb");
  const int type = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  if (!detail::png_write_rows(f.get(), img.width, img.height, type, 8, rows.data()))
    throw DataError("failed to encode png", {path.string()});
}

inline Image read_png_rgb(const std::filesystem::path& path) {
  auto f = detail::open_file(path, "rb");
  detail::PngHeader hdr;
  Image img;
  std::vector<png_bytep> rows;
  if (!detail::png_read_all(f.get(), true, hdr, img.data, rows)) throw DataError("corrupt or truncated png", {path.string()});
  img.width = static_cast<int>(hdr.width);
  img.height = static_cast<int>(hdr.height);
  img.channels = 3;
  return img;
}

/// Single-channel 16-bit image (used for depth in millimeters).
struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;
  bool operator==(const Image16&) const = default;
};

inline void write_png16(const std::filesystem::path& path, const Image16& img) {
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(img.data.data() + static_cast<std::size_t>(r) * img.width));
  auto f = detail::open_file(path, "wb");
  if (!detail::png_write_rows(f.get(), img.width, img.height, PNG_COLOR_TYPE_GRAY, 16, rows.data()))
    throw DataError("failed to encode png", {path.string()});
}

inline Image16 read_png16(const std::filesystem::path& path) {
  auto f = detail::open_file(path, "rb");
  detail::PngHeader hdr;
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (!detail::png_read_all(f.get(), false, hdr, bytes, rows))
    throw DataError("corrupt, truncated or non-16-bit png", {path.string()});
  Image16 img;
  img.width = static_cast<int>(hdr.width);
  img.height = static_cast<int>(hdr.height);
  img.data.resize(static_cast<std::size_t>(img.width) * img.height);
  std::memcpy(img.data.data(), bytes.data(), img.data.size() * 2);
  return img;
}

}  // namespace moss::render
