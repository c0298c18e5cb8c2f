#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>

namespace usplat {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Vec6 = Eigen::Matrix<T, 6, 1>;
template <typename T> using Vec10 = Eigen::Matrix<T, 10, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;
template <typename T> using Mat23 = Eigen::Matrix<T, 2, 3>;
template <typename T> using Mat26 = Eigen::Matrix<T, 2, 6>;
template <typename T> using Mat34 = Eigen::Matrix<T, 3, 4>;
template <typename T> using ArrayXX = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Vec4d = Vec4<double>;
using Vec6d = Vec6<double>;
using Mat3d = Mat3<double>;
using Mat4d = Mat4<double>;
using ArrayXXd = ArrayXX<double>;

/// Orthonormality / determinant / identity checks share this tolerance.
inline constexpr double kOrthoTol = 1e-9;

/// Floor for homogeneous denominators in the 10D pose decoder.
inline constexpr double kHomogeneousEps = 1e-6;

/// Camera-frame depth below which projection is rejected (meters).
inline constexpr double kZNear = 1e-4;

template <typename T> constexpr T sq(T x) { return x * x; }

template <typename T> T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Inverse of sigmoid; computed via log1p so moderate logits survive a
/// float32 round-trip bit-exactly.
template <typename T> T logit(T p) { return std::log(p) - std::log1p(-p); }

}  // namespace usplat
