#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "usplat/core/image.hpp"
#include "usplat/metrics/ssim.hpp"

namespace usplat {

inline constexpr double kPsnrCap = 99.0;  // reported for an exact match

/// Peak signal-to-noise ratio for unit dynamic range, in dB.
template <typename T>
T psnr(const Image<T>& ref, const Image<T>& img) {
  const T mse = image_mse(ref, img);
  if (mse <= T(0)) return T(kPsnrCap);
  return std::min(T(kPsnrCap), T(-10) * std::log10(mse));
}

template <typename T>
T dssim(const Image<T>& ref, const Image<T>& img) {
  return (T(1) - ssim(ref, img)) / T(2);
}

/// Area under the recall curve of pose errors up to threshold tau,
/// normalized to [0, 1]. Equals the exact integral of the empirical
/// step-function CDF: each sample contributes max(0, 1 - e/tau) / N.
inline double pose_auc(const std::vector<double>& errors, double tau) {
  if (errors.empty()) throw std::invalid_argument("pose_auc: no samples");
  if (!(tau > 0)) throw std::invalid_argument("pose_auc: tau must be positive");
  double acc = 0;
  for (double e : errors) acc += std::max(0.0, 1.0 - e / tau);
  return acc / double(errors.size());
}

}  // namespace usplat
