#pragma once

#include <array>
#include <cmath>

#include "usplat/core/types.hpp"

namespace usplat {

/// Real spherical harmonics basis, degrees 0..2, in the standard
/// splatting band order: [l=0 | l=1: -y,z,-x | l=2: xy,yz,2z^2-x^2-y^2,xz,x^2-y^2].
inline constexpr int kShMaxCoeffs = 9;

inline constexpr double kSh0 = 0.28209479177387814;   // 1/(2 sqrt(pi))
inline constexpr double kSh1 = 0.4886025119029199;    // sqrt(3/(4 pi))
inline constexpr double kSh2[5] = {
    1.0925484305920792,    // sqrt(15/(4 pi))   : xy
    -1.0925484305920792,   //                   : yz (sign folded in)
    0.31539156525252005,   // sqrt(5/(16 pi))   : 3z^2-1
    -1.0925484305920792,   //                   : xz (sign folded in)
    0.5462742152960396};   // sqrt(15/(16 pi))  : x^2-y^2

inline constexpr int sh_coeff_count(int degree) {
  return (degree + 1) * (degree + 1);
}

/// Evaluates the basis at unit direction d. Only the first
/// sh_coeff_count(degree) entries of `basis` are written.
template <typename T>
void sh_basis(int degree, const Vec3<T>& d, T* basis) {
  basis[0] = T(kSh0);
  if (degree < 1) return;
  const T x = d.x(), y = d.y(), z = d.z();
  basis[1] = T(-kSh1) * y;
  basis[2] = T(kSh1) * z;
  basis[3] = T(-kSh1) * x;
  if (degree < 2) return;
  basis[4] = T(kSh2[0]) * x * y;
  basis[5] = T(kSh2[1]) * y * z;
  basis[6] = T(kSh2[2]) * (T(3) * z * z - T(1));
  basis[7] = T(kSh2[3]) * x * z;
  basis[8] = T(kSh2[4]) * (x * x - y * y);
}

/// d(basis[i])/d(direction), same ordering. Derivatives are with respect
/// to the raw direction components; the normalization chain is applied
/// by the caller.
template <typename T>
void sh_basis_grad(int degree, const Vec3<T>& d, Vec3<T>* grad) {
  grad[0].setZero();
  if (degree < 1) return;
  const T x = d.x(), y = d.y(), z = d.z();
  grad[1] = {T(0), T(-kSh1), T(0)};
  grad[2] = {T(0), T(0), T(kSh1)};
  grad[3] = {T(-kSh1), T(0), T(0)};
  if (degree < 2) return;
  grad[4] = {T(kSh2[0]) * y, T(kSh2[0]) * x, T(0)};
  grad[5] = {T(0), T(kSh2[1]) * z, T(kSh2[1]) * y};
  grad[6] = {T(0), T(0), T(kSh2[2]) * T(6) * z};
  grad[7] = {T(kSh2[3]) * z, T(0), T(kSh2[3]) * x};
  grad[8] = {T(kSh2[4]) * T(2) * x, T(-kSh2[4]) * T(2) * y, T(0)};
}

/// Per-gaussian view-dependent color block: `count` coefficient triples.
template <typename T>
struct ShVec {
  int count = 1;  // 1, 4, or 9
  std::array<Vec3<T>, kShMaxCoeffs> coeffs{};

  int degree() const {
    if (count >= 9) return 2;
    if (count >= 4) return 1;
    return 0;
  }

  static ShVec constant(const Vec3<T>& rgb) {
    ShVec v;
    v.count = 1;
    v.coeffs[0] = rgb / T(kSh0);
    return v;
  }

  template <typename U>
  ShVec<U> cast() const {
    ShVec<U> out;
    out.count = count;
    for (int i = 0; i < count; ++i) out.coeffs[i] = coeffs[i].template cast<U>();
    return out;
  }
};

/// Color before the non-negativity clamp: 0.5 + sum_i basis_i * c_i.
template <typename T>
Vec3<T> sh_color_raw(const ShVec<T>& sh, const Vec3<T>& unit_dir) {
  T basis[kShMaxCoeffs];
  sh_basis(sh.degree(), unit_dir, basis);
  Vec3<T> c = Vec3<T>::Constant(T(0.5));
  for (int i = 0; i < sh.count; ++i) c += basis[i] * sh.coeffs[i];
  return c;
}

template <typename T>
Vec3<T> sh_color(const ShVec<T>& sh, const Vec3<T>& unit_dir) {
  return sh_color_raw(sh, unit_dir).cwiseMax(T(0));
}

/// DC coefficient reproducing `rgb` under sh_color with any direction.
template <typename T>
Vec3<T> sh_dc_from_rgb(const Vec3<T>& rgb) {
  return (rgb - Vec3<T>::Constant(T(0.5))) / T(kSh0);
}

template <typename T>
Vec3<T> sh_rgb_from_dc(const Vec3<T>& dc) {
  return (dc * T(kSh0) + Vec3<T>::Constant(T(0.5))).cwiseMax(T(0));
}

}  // namespace usplat
