#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "usplat/core/image.hpp"
#include "usplat/core/types.hpp"

namespace usplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

template <typename T>
std::array<T, kSsimWindow> ssim_kernel() {
  std::array<T, kSsimWindow> k;
  const int c = kSsimWindow / 2;
  T sum = T(0);
  for (int i = 0; i < kSsimWindow; ++i) {
    const T d = T(i - c);
    k[std::size_t(i)] = std::exp(-d * d / T(2 * kSsimSigma * kSsimSigma));
    sum += k[std::size_t(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable valid-mode correlation with the SSIM window. Output is
/// (H-10) x (W-10).
template <typename T>
ArrayXX<T> window_correlate_valid(const ArrayXX<T>& img) {
  const auto k = ssim_kernel<T>();
  const int h = int(img.rows()), w = int(img.cols());
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  ArrayXX<T> horiz(h, ow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      T acc = T(0);
      for (int i = 0; i < kSsimWindow; ++i) acc += k[std::size_t(i)] * img(r, c + i);
      horiz(r, c) = acc;
    }
  ArrayXX<T> out(oh, ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      T acc = T(0);
      for (int i = 0; i < kSsimWindow; ++i) acc += k[std::size_t(i)] * horiz(r + i, c);
      out(r, c) = acc;
    }
  return out;
}

/// Adjoint of window_correlate_valid: scatters a valid-size gradient
/// back to full image size. Equals valid correlation of the zero-padded
/// input because the window is symmetric.
template <typename T>
ArrayXX<T> window_scatter_full(const ArrayXX<T>& g, int out_h, int out_w) {
  const int pad = kSsimWindow - 1;
  ArrayXX<T> padded = ArrayXX<T>::Zero(g.rows() + 2 * pad, g.cols() + 2 * pad);
  padded.block(pad, pad, g.rows(), g.cols()) = g;
  ArrayXX<T> out = window_correlate_valid(padded);
  if (int(out.rows()) != out_h || int(out.cols()) != out_w)
    throw std::logic_error("window_scatter_full: size mismatch");
  return out;
}

}  // namespace detail

/// Mean SSIM between two images over the fully-valid window region,
/// averaged across channels. Dynamic range is fixed at 1.
template <typename T>
T ssim(const Image<T>& ref, const Image<T>& img) {
  if (!same_shape(ref, img)) throw std::invalid_argument("ssim: shape mismatch");
  if (ref.width() < kSsimWindow || ref.height() < kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than window");
  const T c1 = T(kSsimK1 * kSsimK1), c2 = T(kSsimK2 * kSsimK2);
  T total = T(0);
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    const ArrayXX<T> mu_x = detail::window_correlate_valid(ref.ch[c]);
    const ArrayXX<T> mu_y = detail::window_correlate_valid(img.ch[c]);
    const ArrayXX<T> xx = detail::window_correlate_valid<T>(ref.ch[c] * ref.ch[c]);
    const ArrayXX<T> yy = detail::window_correlate_valid<T>(img.ch[c] * img.ch[c]);
    const ArrayXX<T> xy = detail::window_correlate_valid<T>(ref.ch[c] * img.ch[c]);
    const ArrayXX<T> var_x = xx - mu_x * mu_x;
    const ArrayXX<T> var_y = yy - mu_y * mu_y;
    const ArrayXX<T> cov = xy - mu_x * mu_y;
    const ArrayXX<T> num = (T(2) * mu_x * mu_y + c1) * (T(2) * cov + c2);
    const ArrayXX<T> den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
    total += (num / den).sum();
    count += std::size_t(mu_x.size());
  }
  return total / T(count);
}

/// Adds d(mean SSIM)/d(img) * d_upstream into d_img and returns the
/// SSIM value. The reference image is treated as constant.
template <typename T>
T ssim_backward(const Image<T>& ref, const Image<T>& img, T d_upstream,
                Image<T>& d_img) {
  if (!same_shape(ref, img))
    throw std::invalid_argument("ssim_backward: shape mismatch");
  if (ref.width() < kSsimWindow || ref.height() < kSsimWindow)
    throw std::invalid_argument("ssim_backward: image smaller than window");
  const T c1 = T(kSsimK1 * kSsimK1), c2 = T(kSsimK2 * kSsimK2);
  const int oh = ref.height() - kSsimWindow + 1;
  const int ow = ref.width() - kSsimWindow + 1;
  const T per_pixel = d_upstream / T(3 * oh * ow);
  T total = T(0);
  for (int c = 0; c < 3; ++c) {
    const ArrayXX<T>& x = ref.ch[c];
    const ArrayXX<T>& y = img.ch[c];
    const ArrayXX<T> mu_x = detail::window_correlate_valid(x);
    const ArrayXX<T> mu_y = detail::window_correlate_valid(y);
    const ArrayXX<T> xx = detail::window_correlate_valid<T>(x * x);
    const ArrayXX<T> yy = detail::window_correlate_valid<T>(y * y);
    const ArrayXX<T> xy = detail::window_correlate_valid<T>(x * y);
    const ArrayXX<T> var_x = xx - mu_x * mu_x;
    const ArrayXX<T> var_y = yy - mu_y * mu_y;
    const ArrayXX<T> cov = xy - mu_x * mu_y;
    const ArrayXX<T> a1 = T(2) * mu_x * mu_y + c1;
    const ArrayXX<T> a2 = T(2) * cov + c2;
    const ArrayXX<T> b1 = mu_x * mu_x + mu_y * mu_y + c1;
    const ArrayXX<T> b2 = var_x + var_y + c2;
    const ArrayXX<T> value = (a1 * a2) / (b1 * b2);
    total += value.sum();

    // Partials of the per-window SSIM w.r.t. mu_y, cov, var_y.
    const ArrayXX<T> f1 =
        (T(2) * mu_x * a2) / (b1 * b2) - (T(2) * mu_y) * value / b1;
    const ArrayXX<T> f2 = (T(2) * a1) / (b1 * b2);
    const ArrayXX<T> f3 = -value / b2;

    // mu_y, cov, var_y are all window correlations; their adjoints
    // scatter back through the same window.
    const ArrayXX<T> g1 = per_pixel * f1;
    const ArrayXX<T> g2 = per_pixel * f2;
    const ArrayXX<T> g3 = per_pixel * f3;
    ArrayXX<T> d_y =
        detail::window_scatter_full<T>(g1 + g2 * (-mu_x) + g3 * (T(-2) * mu_y),
                                       ref.height(), ref.width());
    d_y += x * detail::window_scatter_full<T>(g2, ref.height(), ref.width());
    d_y += T(2) * y * detail::window_scatter_full<T>(g3, ref.height(), ref.width());
    d_img.ch[c] += d_y;
  }
  return total / T(3 * oh * ow);
}

}  // namespace usplat
