#pragma once

#include <string>

#include "usplat/core/image.hpp"

namespace usplat {

/// 8-bit RGB. Values are clamped to [0, 1] and rounded on write;
/// reading maps sample s to s / 255.
void write_png_rgb(const std::string& path, const Image<double>& img);
Image<double> read_png_rgb(const std::string& path);

/// 16-bit grayscale, used for depth maps. Values are multiplied by
/// `scale`, rounded, and clamped to the sample range on write; reading
/// divides by the same scale.
inline constexpr double kDepthPngScale = 1000.0;
void write_png_gray16(const std::string& path, const ArrayXXd& values,
                      double scale = kDepthPngScale);
ArrayXXd read_png_gray16(const std::string& path,
                         double scale = kDepthPngScale);

}  // namespace usplat
