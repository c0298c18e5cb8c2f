#pragma once

#include <array>
#include <stdexcept>

#include "usplat/core/types.hpp"

namespace usplat {

/// Planar RGB image, values nominally in [0, 1]. Planes are indexed
/// (row y, col x).
template <typename T>
struct Image {
  std::array<ArrayXX<T>, 3> ch;

  Image() = default;
  Image(int width, int height) { resize(width, height); }

  static Image zeros(int width, int height) { return Image(width, height); }

  static Image constant(int width, int height, const Vec3<T>& rgb) {
    Image im(width, height);
    for (int c = 0; c < 3; ++c) im.ch[c].setConstant(rgb[c]);
    return im;
  }

  void resize(int width, int height) {
    for (auto& p : ch) p = ArrayXX<T>::Zero(height, width);
  }

  int width() const { return int(ch[0].cols()); }
  int height() const { return int(ch[0].rows()); }
  bool empty() const { return ch[0].size() == 0; }

  Vec3<T> at(int x, int y) const {
    return {ch[0](y, x), ch[1](y, x), ch[2](y, x)};
  }
  void set(int x, int y, const Vec3<T>& rgb) {
    for (int c = 0; c < 3; ++c) ch[c](y, x) = rgb[c];
  }

  Image clamped01() const {
    Image out = *this;
    for (auto& p : out.ch) p = p.cwiseMax(T(0)).cwiseMin(T(1));
    return out;
  }

  template <typename U>
  Image<U> cast() const {
    Image<U> out;
    for (int c = 0; c < 3; ++c) out.ch[c] = ch[c].template cast<U>();
    return out;
  }
};

template <typename T>
bool same_shape(const Image<T>& a, const Image<T>& b) {
  return a.width() == b.width() && a.height() == b.height();
}

/// Mean squared error over all pixels and channels.
template <typename T>
T image_mse(const Image<T>& a, const Image<T>& b) {
  if (!same_shape(a, b)) throw std::invalid_argument("image_mse: shape mismatch");
  T acc = T(0);
  for (int c = 0; c < 3; ++c) acc += (a.ch[c] - b.ch[c]).square().sum();
  return acc / T(3 * a.width() * a.height());
}

template <typename T>
T image_max_abs_diff(const Image<T>& a, const Image<T>& b) {
  if (!same_shape(a, b))
    throw std::invalid_argument("image_max_abs_diff: shape mismatch");
  T m = T(0);
  for (int c = 0; c < 3; ++c) {
    if (a.ch[c].size() > 0) m = std::max(m, (a.ch[c] - b.ch[c]).abs().maxCoeff());
  }
  return m;
}

}  // namespace usplat
