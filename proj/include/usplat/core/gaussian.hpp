#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "usplat/core/sh.hpp"
#include "usplat/core/types.hpp"

namespace usplat {

/// Rotation from a unit quaternion stored (w, x, y, z).
template <typename T>
Mat3<T> unit_quat_to_rotation(const Vec4<T>& q) {
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<T> r;
  r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
       T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
       T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
  return r;
}

/// d(R_ij)/d(q_k) for a quaternion already on the unit sphere.
/// Returns four 3x3 blocks, one per quaternion component.
template <typename T>
std::array<Mat3<T>, 4> unit_quat_to_rotation_jacobian(const Vec4<T>& q) {
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3<T>, 4> j;
  j[0] << T(0), -T(2) * z, T(2) * y,
          T(2) * z, T(0), -T(2) * x,
          -T(2) * y, T(2) * x, T(0);
  j[1] << T(0), T(2) * y, T(2) * z,
          T(2) * y, -T(4) * x, -T(2) * w,
          T(2) * z, T(2) * w, -T(4) * x;
  j[2] << -T(4) * y, T(2) * x, T(2) * w,
          T(2) * x, T(0), T(2) * z,
          -T(2) * w, T(2) * z, -T(4) * y;
  j[3] << -T(4) * z, -T(2) * w, T(2) * x,
          T(2) * w, -T(4) * z, T(2) * y,
          T(2) * x, T(2) * y, T(0);
  return j;
}

/// Pulls a gradient w.r.t. a normalized quaternion back through the
/// normalization q_hat = q / |q|.
template <typename T>
Vec4<T> quat_normalize_backward(const Vec4<T>& q_raw, const Vec4<T>& d_q_hat) {
  const T n = q_raw.norm();
  const Vec4<T> q_hat = q_raw / n;
  return (d_q_hat - q_hat * q_hat.dot(d_q_hat)) / n;
}

/// Anisotropic 3D gaussian with a log-scale / logit-opacity
/// parameterization so every real-valued setting is admissible.
template <typename T>
struct GaussianPrimitive {
  Vec3<T> center = Vec3<T>::Zero();
  Vec4<T> rotation = Vec4<T>(T(1), T(0), T(0), T(0));  // unit quaternion (w,x,y,z)
  Vec3<T> log_scale = Vec3<T>::Zero();
  T opacity_logit = T(0);
  ShVec<T> sh;

  Vec3<T> scale() const { return log_scale.array().exp().matrix(); }
  T opacity() const { return sigmoid(opacity_logit); }

  /// Sigma = R diag(s^2) R^T via the factor M = R diag(s).
  Mat3<T> covariance() const {
    const Mat3<T> m =
        unit_quat_to_rotation<T>(rotation.normalized()) * scale().asDiagonal();
    return m * m.transpose();
  }

  template <typename U>
  GaussianPrimitive<U> cast() const {
    GaussianPrimitive<U> g;
    g.center = center.template cast<U>();
    g.rotation = rotation.template cast<U>();
    g.log_scale = log_scale.template cast<U>();
    g.opacity_logit = U(opacity_logit);
    g.sh = sh.template cast<U>();
    return g;
  }
};

/// One gaussian per pixel of a context view, row-major.
template <typename T>
struct PixelAlignedGaussianMap {
  int view_index = 0;
  int width = 0;
  int height = 0;
  std::vector<GaussianPrimitive<T>> prims;

  GaussianPrimitive<T>& at(int px, int py) {
    return prims[std::size_t(py) * width + px];
  }
  const GaussianPrimitive<T>& at(int px, int py) const {
    return prims[std::size_t(py) * width + px];
  }

  bool is_complete() const {
    return width > 0 && height > 0 &&
           prims.size() == std::size_t(width) * height;
  }
};

template <typename T>
struct Scene {
  std::vector<GaussianPrimitive<T>> gaussians;

  std::size_t size() const { return gaussians.size(); }

  int sh_count() const {
    int c = 1;
    for (const auto& g : gaussians) c = std::max(c, g.sh.count);
    return c;
  }

  template <typename U>
  Scene<U> cast() const {
    Scene<U> s;
    s.gaussians.reserve(gaussians.size());
    for (const auto& g : gaussians) s.gaussians.push_back(g.template cast<U>());
    return s;
  }
};

/// Records which contiguous block of the flat scene came from which
/// context view, so the per-pixel structure survives a round trip.
struct SceneAlignment {
  struct ViewBlock {
    int view_index = 0;
    int width = 0;
    int height = 0;
    std::size_t offset = 0;
    // fx, fy, cx, cy of the source view when known; lets pose tools run
    // from the scene file alone.
    std::optional<std::array<double, 4>> intrinsics;
  };
  std::vector<ViewBlock> blocks;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += std::size_t(b.width) * b.height;
    return n;
  }
};

/// Concatenates per-view maps in view order; row-major within a view.
template <typename T>
Scene<T> assemble_scene(const std::vector<PixelAlignedGaussianMap<T>>& maps,
                        SceneAlignment* alignment = nullptr) {
  Scene<T> scene;
  if (alignment) alignment->blocks.clear();
  std::size_t offset = 0;
  for (const auto& m : maps) {
    if (!m.is_complete())
      throw std::invalid_argument("assemble_scene: incomplete pixel map");
    if (alignment)
      alignment->blocks.push_back({m.view_index, m.width, m.height, offset});
    scene.gaussians.insert(scene.gaussians.end(), m.prims.begin(), m.prims.end());
    offset += m.prims.size();
  }
  return scene;
}

template <typename T>
std::vector<PixelAlignedGaussianMap<T>> decompose_scene(
    const Scene<T>& scene, const SceneAlignment& alignment) {
  if (alignment.total() != scene.size())
    throw std::invalid_argument("decompose_scene: alignment/scene size mismatch");
  std::vector<PixelAlignedGaussianMap<T>> maps;
  maps.reserve(alignment.blocks.size());
  for (const auto& b : alignment.blocks) {
    PixelAlignedGaussianMap<T> m;
    m.view_index = b.view_index;
    m.width = b.width;
    m.height = b.height;
    const auto first = scene.gaussians.begin() + long(b.offset);
    m.prims.assign(first, first + long(std::size_t(b.width) * b.height));
    maps.push_back(std::move(m));
  }
  return maps;
}

/// All-finite check plus near-unit quaternions; throws with the index of
/// the first offending gaussian.
template <typename T>
void validate_scene(const Scene<T>& scene, T quat_tol = T(1e-3)) {
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    const auto& g = scene.gaussians[i];
    const bool finite = g.center.allFinite() && g.rotation.allFinite() &&
                        g.log_scale.allFinite() && std::isfinite(double(g.opacity_logit));
    if (!finite)
      throw std::invalid_argument("scene gaussian " + std::to_string(i) +
                                  ": non-finite parameter");
    if (std::abs(double(g.rotation.norm()) - 1.0) > double(quat_tol))
      throw std::invalid_argument("scene gaussian " + std::to_string(i) +
                                  ": quaternion far from unit length");
    if (g.sh.count != 1 && g.sh.count != 4 && g.sh.count != 9)
      throw std::invalid_argument("scene gaussian " + std::to_string(i) +
                                  ": invalid sh coefficient count");
  }
}

}  // namespace usplat
