#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "usplat/core/types.hpp"

namespace usplat {

/// Rigid transform x -> R*x + t. Poses named P_a_to_b map a-frame points
/// into frame b.
template <typename T> struct SE3Pose {
  Mat3<T> rotation = Mat3<T>::Identity();
  Vec3<T> translation = Vec3<T>::Zero();

  static SE3Pose identity() { return {}; }

  Vec3<T> apply(const Vec3<T>& x) const { return rotation * x + translation; }

  Mat4<T> matrix() const {
    Mat4<T> m = Mat4<T>::Identity();
    m.template block<3, 3>(0, 0) = rotation;
    m.template block<3, 1>(0, 3) = translation;
    return m;
  }

  static SE3Pose from_matrix(const Mat4<T>& m) {
    return {m.template block<3, 3>(0, 0), m.template block<3, 1>(0, 3)};
  }

  bool is_valid(T tol = T(kOrthoTol)) const {
    const Mat3<T> err = rotation.transpose() * rotation - Mat3<T>::Identity();
    return err.norm() <= tol && std::abs(rotation.determinant() - T(1)) <= tol &&
           rotation.allFinite() && translation.allFinite();
  }

  template <typename U> SE3Pose<U> cast() const {
    return {rotation.template cast<U>(), translation.template cast<U>()};
  }
};

template <typename T> SE3Pose<T> se3_inverse(const SE3Pose<T>& p) {
  const Mat3<T> rt = p.rotation.transpose();
  return {rt, -(rt * p.translation)};
}

/// compose(A, B) applies B first: x -> A(B(x)).
template <typename T> SE3Pose<T> se3_compose(const SE3Pose<T>& a, const SE3Pose<T>& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename T> Mat3<T> skew(const Vec3<T>& v) {
  Mat3<T> m;
  m << T(0), -v.z(), v.y(), v.z(), T(0), -v.x(), -v.y(), v.x(), T(0);
  return m;
}

/// Exponential map of se(3); twist ordered (rotation, translation).
template <typename T> SE3Pose<T> se3_exp(const Vec6<T>& twist) {
  const Vec3<T> omega = twist.template head<3>();
  const Vec3<T> nu = twist.template tail<3>();
  const T theta = omega.norm();
  const Mat3<T> w = skew(omega);
  Mat3<T> rot, v;
  if (theta < T(1e-10)) {
    rot = Mat3<T>::Identity() + w + T(0.5) * w * w;
    v = Mat3<T>::Identity() + T(0.5) * w;
  } else {
    const T a = std::sin(theta) / theta;
    const T b = (T(1) - std::cos(theta)) / (theta * theta);
    const T c = (T(1) - a) / (theta * theta);
    rot = Mat3<T>::Identity() + a * w + b * w * w;
    v = Mat3<T>::Identity() + b * w + c * w * w;
  }
  return {rot, v * nu};
}

/// Re-expresses every pose relative to the first one, so result[0] is the
/// identity and pairwise relative poses are preserved.
template <typename T>
std::vector<SE3Pose<T>> normalize_to_canonical(const std::vector<SE3Pose<T>>& poses) {
  if (poses.empty()) throw std::invalid_argument("normalize_to_canonical: empty pose list");
  const SE3Pose<T> ref_inv = se3_inverse(poses.front());
  std::vector<SE3Pose<T>> out;
  out.reserve(poses.size());
  for (const auto& p : poses) out.push_back(se3_compose(ref_inv, p));
  return out;
}

/// Angle of the relative rotation, arccos((trace(R1^T R2) - 1) / 2).
template <typename T> T rotation_geodesic_error(const Mat3<T>& r1, const Mat3<T>& r2) {
  const T c = ((r1.transpose() * r2).trace() - T(1)) / T(2);
  return std::acos(std::clamp(c, T(-1), T(1)));
}

/// Angle between translation directions; scale free. Both near zero
/// compares equal (0), exactly one near zero is maximally ambiguous (pi/2).
template <typename T> T translation_angle_error(const Vec3<T>& t1, const Vec3<T>& t2) {
  const T n1 = t1.norm(), n2 = t2.norm();
  const bool z1 = n1 < T(1e-9), z2 = n2 < T(1e-9);
  if (z1 && z2) return T(0);
  if (z1 || z2) return T(M_PI) / T(2);
  const T c = t1.dot(t2) / (n1 * n2);
  return std::acos(std::clamp(c, T(-1), T(1)));
}

template <typename T> T pose_error(const SE3Pose<T>& estimate, const SE3Pose<T>& truth) {
  return std::max(rotation_geodesic_error(estimate.rotation, truth.rotation),
                  translation_angle_error(estimate.translation, truth.translation));
}

/// Backward through se3_inverse: given gradients w.r.t. the inverse's
/// rotation/translation, accumulate gradients w.r.t. the forward pose.
/// For Q = inv(P): Q.R = P.R^T, Q.t = -P.R^T P.t.
template <typename T>
void se3_inverse_backward(const SE3Pose<T>& fwd, const Mat3<T>& d_inv_rot,
                          const Vec3<T>& d_inv_trans, Mat3<T>& d_rot, Vec3<T>& d_trans) {
  d_rot += d_inv_rot.transpose();
  d_rot += -fwd.translation * d_inv_trans.transpose();
  d_trans += -(fwd.rotation * d_inv_trans);
}

}  // namespace usplat
