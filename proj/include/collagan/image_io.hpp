#pragma once

// Image file access. RGB images go through OpenCV; label maps and binary
// masks go through libpng directly because palette PNGs must be read as raw
// indices rather than expanded colors.

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "collagan/errors.hpp"

namespace collagan::io {

namespace fs = std::filesystem;

/// Reads an RGB image as CV_32FC3 in RGB order with values in [-1, 1].
inline cv::Mat load_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + path.string());
  cv::Mat rgb, out;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(out, CV_32FC3, 1.0 / 127.5, -1.0);
  return out;
}

/// Converts a [-1, 1] RGB float image to 8-bit RGB with rounding.
inline cv::Mat to_rgb8(const cv::Mat& image) {
  cv::Mat out;
  image.convertTo(out, CV_8UC3, 127.5, 127.5);
  return out;
}

inline void save_rgb(const fs::path& path, const cv::Mat& image) {
  cv::Mat rgb8 = image.depth() == CV_8U ? image : to_rgb8(image);
  cv::Mat bgr;
  cv::cvtColor(rgb8, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image " + path.string());
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8-bit single-channel or palette PNG as raw values (CV_8UC1).
inline cv::Mat load_index_png(const fs::path& path) {
  detail::File file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw DataError("cannot open label map " + path.string());
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed for " + path.string());
  }
  cv::Mat out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt label map " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("label map " + path.string() + " must be a palette or grayscale PNG");
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) png_set_strip_16(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  out.create(height, width, CV_8UC1);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = out.ptr<png_byte>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  // Sub-byte grayscale is left unscaled so 1-bit masks read back as {0, 1}.
  return out;
}

namespace detail {

inline void write_png(const fs::path& path, const cv::Mat& data, int bit_depth, int color_type,
                      const std::vector<png_color>& palette) {
  detail::File file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw DataError("cannot open " + path.string() + " for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed for " + path.string());
  }
  std::vector<png_bytep> rows(data.rows);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("cannot write " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, data.cols, data.rows, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (!palette.empty()) png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  // Fixed metadata keeps repeated writes byte-identical.
  png_write_info(png, info);
  if (bit_depth < 8) png_set_packing(png);
  for (int y = 0; y < data.rows; ++y) rows[y] = const_cast<png_bytep>(data.ptr<png_byte>(y));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// Writes a class-id map as an 8-bit palette PNG.
inline void save_label_png(const fs::path& path, const cv::Mat& labels) {
  CV_Assert(labels.type() == CV_8UC1);
  static const std::array<png_color, 10> base{{{0, 0, 0},
                                               {204, 153, 128},
                                               {120, 60, 20},
                                               {160, 90, 40},
                                               {30, 30, 200},
                                               {60, 60, 255},
                                               {230, 120, 80},
                                               {200, 40, 60},
                                               {250, 250, 250},
                                               {150, 20, 40}}};
  std::vector<png_color> palette(256);
  for (int i = 0; i < 256; ++i) {
    palette[i] = i < static_cast<int>(base.size())
                     ? base[i]
                     : png_color{static_cast<png_byte>(i), static_cast<png_byte>(i), static_cast<png_byte>(i)};
  }
  detail::write_png(path, labels, 8, PNG_COLOR_TYPE_PALETTE, palette);
}

/// Writes a {0, 1} grid as a 1-bit grayscale PNG.
inline void save_bilevel_png(const fs::path& path, const cv::Mat& bits) {
  CV_Assert(bits.type() == CV_8UC1);
  detail::write_png(path, bits, 1, PNG_COLOR_TYPE_GRAY, {});
}

}  // namespace collagan::io
