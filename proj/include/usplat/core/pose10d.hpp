#pragma once

#include <cmath>
#include <stdexcept>

#include "usplat/core/se3.hpp"
#include "usplat/core/types.hpp"

namespace usplat {

/// 10-parameter optimizable pose: a homogeneous 4-vector for translation
/// plus a 6D rotation (two unnormalized axis columns, Gram-Schmidt
/// orthonormalized on decode). Continuous over SO(3), so plain gradient
/// steps stay on-manifold after decoding.
template <typename T> struct Pose10D {
  Vec4<T> trans_h = Vec4<T>(T(0), T(0), T(0), T(1));
  Vec6<T> rot6 = (Vec6<T>() << T(1), T(0), T(0), T(0), T(1), T(0)).finished();

  /// Decodes to the exact identity pose.
  static Pose10D identity() { return {}; }

  Vec10<T> as_vector() const {
    Vec10<T> v;
    v.template head<4>() = trans_h;
    v.template tail<6>() = rot6;
    return v;
  }

  static Pose10D from_vector(const Vec10<T>& v) {
    Pose10D p;
    p.trans_h = v.template head<4>();
    p.rot6 = v.template tail<6>();
    return p;
  }
};

/// Gram-Schmidt on the two 3-vector halves, third column by cross product.
/// Throws on near-parallel or near-zero inputs.
template <typename T> Mat3<T> rot6d_to_matrix(const Vec6<T>& rot6) {
  const Vec3<T> a1 = rot6.template head<3>();
  const Vec3<T> a2 = rot6.template tail<3>();
  const T n1 = a1.norm();
  if (n1 <= T(1e-12)) throw std::invalid_argument("rot6d_to_matrix: first axis near zero");
  const Vec3<T> b1 = a1 / n1;
  const Vec3<T> r = a2 - a2.dot(b1) * b1;
  const T nr = r.norm();
  if (nr <= T(1e-12)) throw std::invalid_argument("rot6d_to_matrix: axes near parallel");
  const Vec3<T> b2 = r / nr;
  Mat3<T> m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

/// First two columns of R; exact right inverse of rot6d_to_matrix on SO(3).
template <typename T> Vec6<T> matrix_to_rot6d(const Mat3<T>& rot) {
  const Mat3<T> err = rot.transpose() * rot - Mat3<T>::Identity();
  if (err.norm() > T(1e-6) || rot.determinant() < T(0))
    throw std::invalid_argument("matrix_to_rot6d: input is not a rotation");
  Vec6<T> v;
  v.template head<3>() = rot.col(0);
  v.template tail<3>() = rot.col(1);
  return v;
}

/// Perspective division with a hard floor on the denominator.
template <typename T> Vec3<T> homogeneous4_to_translation(const Vec4<T>& trans_h) {
  return trans_h.template head<3>() / std::max(trans_h[3], T(kHomogeneousEps));
}

template <typename T> SE3Pose<T> pose10d_to_se3(const Pose10D<T>& p) {
  return {rot6d_to_matrix(p.rot6), homogeneous4_to_translation(p.trans_h)};
}

/// Canonical encoding: w = 1, rot6 = first two rotation columns.
template <typename T> Pose10D<T> se3_to_pose10d(const SE3Pose<T>& p) {
  Pose10D<T> out;
  out.trans_h << p.translation.x(), p.translation.y(), p.translation.z(), T(1);
  out.rot6 = matrix_to_rot6d(p.rotation);
  return out;
}

/// Backward through rot6d_to_matrix. d_rot columns are gradients w.r.t.
/// b1, b2, b3 of the decoded matrix.
template <typename T> Vec6<T> rot6d_backward(const Vec6<T>& rot6, const Mat3<T>& d_rot) {
  const Vec3<T> a1 = rot6.template head<3>();
  const Vec3<T> a2 = rot6.template tail<3>();
  const T n1 = a1.norm();
  const Vec3<T> b1 = a1 / n1;
  const Vec3<T> r = a2 - a2.dot(b1) * b1;
  const T nr = r.norm();
  const Vec3<T> b2 = r / nr;

  Vec3<T> g1 = d_rot.col(0);
  Vec3<T> g2 = d_rot.col(1);
  const Vec3<T> g3 = d_rot.col(2);

  // b3 = b1 x b2
  g1 += b2.cross(g3);
  g2 += g3.cross(b1);

  // b2 = r / |r|
  const Vec3<T> gr = (g2 - b2 * b2.dot(g2)) / nr;

  // r = a2 - (a2 . b1) b1
  const Vec3<T> ga2 = gr - b1 * b1.dot(gr);
  g1 += -(b1.dot(gr)) * a2 - a2.dot(b1) * gr;

  // b1 = a1 / |a1|
  const Vec3<T> ga1 = (g1 - b1 * b1.dot(g1)) / n1;

  Vec6<T> out;
  out.template head<3>() = ga1;
  out.template tail<3>() = ga2;
  return out;
}

/// Backward through homogeneous4_to_translation. The clamped branch treats
/// the denominator as constant.
template <typename T> Vec4<T> homogeneous4_backward(const Vec4<T>& trans_h, const Vec3<T>& d_t) {
  Vec4<T> out = Vec4<T>::Zero();
  const T w = trans_h[3];
  if (w > T(kHomogeneousEps)) {
    out.template head<3>() = d_t / w;
    out[3] = -trans_h.template head<3>().dot(d_t) / (w * w);
  } else {
    out.template head<3>() = d_t / T(kHomogeneousEps);
  }
  return out;
}

/// Backward through pose10d_to_se3 given gradients on the decoded
/// rotation matrix entries and translation.
template <typename T>
Vec10<T> pose10d_backward(const Pose10D<T>& p, const Mat3<T>& d_rot, const Vec3<T>& d_trans) {
  Vec10<T> out;
  out.template head<4>() = homogeneous4_backward(p.trans_h, d_trans);
  out.template tail<6>() = rot6d_backward(p.rot6, d_rot);
  return out;
}

}  // namespace usplat
