#include "usplat/io/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace usplat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

template <typename T>
T clamp_round(double v, double scale, double max_value) {
  double s = std::round(v * scale);
  if (!(s >= 0)) s = 0;  // also catches NaN
  if (s > max_value) s = max_value;
  return T(s);
}

}  // namespace

void write_png_rgb(const std::string& path, const Image<double>& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("write_png_rgb: cannot open", path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_rgb: libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_rgb: libpng error", path);
  }
  png_init_io(png, fp.get());
  const int w = img.width(), h = img.height();
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(std::size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[std::size_t(x) * 3 + std::size_t(c)] =
            clamp_round<png_byte>(img.ch[c](y, x), 255.0, 255.0);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image<double> read_png_rgb(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("read_png_rgb: cannot open", path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_rgb: libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_rgb: libpng error", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  // Normalize whatever arrives to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));

  Image<double> img(w, h);
  std::vector<png_byte> row(std::size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.ch[c](y, x) =
            double(row[std::size_t(x) * 3 + std::size_t(c)]) / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray16(const std::string& path, const ArrayXXd& values,
                      double scale) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("write_png_gray16: cannot open", path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_gray16: libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_gray16: libpng error", path);
  }
  png_init_io(png, fp.get());
  const int w = int(values.cols()), h = int(values.rows());
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);  // buffers below are host (little-endian) order

  std::vector<png_uint_16> row(std::size_t(w), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      row[std::size_t(x)] = clamp_round<png_uint_16>(values(y, x), scale, 65535.0);
    png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ArrayXXd read_png_gray16(const std::string& path, double scale) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("read_png_gray16: cannot open", path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_gray16: libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_gray16: libpng error", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 16 ||
      png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png_gray16: expected 16-bit grayscale", path);
  }
  png_set_swap(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));

  ArrayXXd out(h, w);
  std::vector<png_uint_16> row(std::size_t(w), 0);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, reinterpret_cast<png_bytep>(row.data()), nullptr);
    for (int x = 0; x < w; ++x) out(y, x) = double(row[std::size_t(x)]) / scale;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace usplat
