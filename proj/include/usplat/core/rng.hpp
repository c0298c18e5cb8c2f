#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "usplat/core/types.hpp"

namespace usplat {

/// mt19937_64 with hand-rolled distributions. std:: distributions are
/// implementation-defined, which would break byte-identical reports
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    // Rejection sampling keeps this unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  Vec3d normal3() { return {normal(), normal(), normal()}; }

  Vec3d unit_vector() {
    Vec3d v;
    do {
      v = normal3();
    } while (v.norm() < 1e-12);
    return v.normalized();
  }

  /// Uniform random rotation (normalized 4D Gaussian quaternion).
  Mat3d rotation() {
    Vec4d q;
    do {
      q << normal(), normal(), normal(), normal();
    } while (q.norm() < 1e-12);
    q.normalize();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
  }

  /// Rotation by a fixed angle about a uniformly random axis.
  Mat3d rotation_with_angle(double angle_rad) {
    const Vec3d axis = unit_vector();
    return Eigen::AngleAxisd(angle_rad, axis).toRotationMatrix();
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace usplat
