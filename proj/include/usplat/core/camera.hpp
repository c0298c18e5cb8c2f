#pragma once

#include <optional>
#include <stdexcept>
#include <utility>

#include "usplat/core/se3.hpp"
#include "usplat/core/types.hpp"

namespace usplat {

/// Pinhole intrinsics; pixel coordinates are continuous with pixel (i, j)
/// centered at (i + 0.5, j + 0.5).
template <typename T> struct CameraIntrinsics {
  T fx = T(0), fy = T(0);
  T cx = T(0), cy = T(0);
  int width = 0, height = 0;

  bool is_valid() const {
    return fx > T(0) && fy > T(0) && cx > T(0) && cx < T(width) && cy > T(0) &&
           cy < T(height) && width > 0 && height > 0;
  }

  template <typename U> CameraIntrinsics<U> cast() const {
    return {U(fx), U(fy), U(cx), U(cy), width, height};
  }
};

template <typename T> struct PixelPoint {
  T u = T(0), v = T(0);
  T depth = T(0);
};

struct BehindCameraError : std::runtime_error {
  BehindCameraError() : std::runtime_error("point projects behind the camera") {}
};

/// Non-throwing projection; empty when the camera-frame depth is at or
/// below z_near.
template <typename T>
std::optional<PixelPoint<T>> try_project(const CameraIntrinsics<T>& K,
                                         const SE3Pose<T>& cam_from_canonical,
                                         const Vec3<T>& x, T z_near = T(kZNear)) {
  const Vec3<T> xc = cam_from_canonical.apply(x);
  if (!(xc.z() > z_near)) return std::nullopt;
  return PixelPoint<T>{K.fx * xc.x() / xc.z() + K.cx, K.fy * xc.y() / xc.z() + K.cy, xc.z()};
}

template <typename T>
PixelPoint<T> project(const CameraIntrinsics<T>& K, const SE3Pose<T>& cam_from_canonical,
                      const Vec3<T>& x, T z_near = T(kZNear)) {
  auto p = try_project(K, cam_from_canonical, x, z_near);
  if (!p) throw BehindCameraError{};
  return *p;
}

/// Camera-frame point on the pixel's ray at the given depth.
template <typename T>
Vec3<T> unproject(const CameraIntrinsics<T>& K, T u, T v, T depth) {
  if (!(depth > T(0))) throw std::invalid_argument("unproject: depth must be positive");
  return {(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth};
}

/// d(pixel)/d(camera-frame point) at xc.
template <typename T>
Mat23<T> pixel_jacobian_wrt_cam_point(const CameraIntrinsics<T>& K, const Vec3<T>& xc) {
  const T iz = T(1) / xc.z();
  Mat23<T> j;
  j << K.fx * iz, T(0), -K.fx * xc.x() * iz * iz,
       T(0), K.fy * iz, -K.fy * xc.y() * iz * iz;
  return j;
}

/// Analytic projection Jacobians: d(pixel)/d(canonical point) and
/// d(pixel)/d(pose twist). The twist is a left-multiplied infinitesimal
/// se(3) perturbation of the camera-from-canonical transform, ordered
/// (rotation, translation): pixel(exp(xi) * P, x).
template <typename T>
std::pair<Mat23<T>, Mat26<T>> projection_jacobian(const CameraIntrinsics<T>& K,
                                                  const SE3Pose<T>& cam_from_canonical,
                                                  const Vec3<T>& x, T z_near = T(kZNear)) {
  const Vec3<T> xc = cam_from_canonical.apply(x);
  if (!(xc.z() > z_near)) throw BehindCameraError{};
  const Mat23<T> d_pix_d_cam = pixel_jacobian_wrt_cam_point(K, xc);
  const Mat23<T> d_pix_d_point = d_pix_d_cam * cam_from_canonical.rotation;
  Mat26<T> d_pix_d_twist;
  d_pix_d_twist.template block<2, 3>(0, 0) = -d_pix_d_cam * skew(xc);
  d_pix_d_twist.template block<2, 3>(0, 3) = d_pix_d_cam;
  return {d_pix_d_point, d_pix_d_twist};
}

}  // namespace usplat
