#pragma once

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "usplat/core/camera.hpp"
#include "usplat/core/rng.hpp"
#include "usplat/core/se3.hpp"
#include "usplat/core/types.hpp"

namespace usplat {

enum class PnPStatus { kOk, kTooFewPoints, kNoConsensus };

struct PnPOptions {
  int min_sample = 6;           // 2n >= 11 makes the linear system determined
  double threshold_px = 2.0;    // inlier reprojection radius
  double confidence = 0.999;
  int max_iterations = 1000;
  double min_inlier_ratio = 0.10;
  std::uint64_t seed = 0;
  int gn_iterations = 50;
  double gn_step_tol = 1e-10;
  double degeneracy_tol = 1e-9;  // relative smallest eigenvalue of sample spread
};

struct PnPResult {
  PnPStatus status = PnPStatus::kNoConsensus;
  SE3Pose<double> cam_from_world;
  std::vector<int> inliers;
  int iterations = 0;    // consensus rounds actually run
  double rms_px = 0.0;   // over final inliers
};

namespace detail {

/// Projective DLT in normalized camera coordinates with an isotropic
/// Hartley rescaling of the 3D points. Returns the camera-from-world
/// candidate with the better positive-depth count, or nothing when the
/// system is numerically unusable.
inline std::optional<SE3Pose<double>> pnp_dlt(
    const std::vector<Vec3d>& points, const std::vector<Vec2d>& rays,
    const std::vector<int>& idx) {
  const int n = int(idx.size());
  Vec3d centroid = Vec3d::Zero();
  for (int i : idx) centroid += points[std::size_t(i)];
  centroid /= double(n);
  double rms = 0;
  for (int i : idx) rms += (points[std::size_t(i)] - centroid).squaredNorm();
  rms = std::sqrt(rms / double(n));
  if (!(rms > 0)) return std::nullopt;
  const double s = std::sqrt(3.0) / rms;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (int r = 0; r < n; ++r) {
    const Vec3d xn = s * (points[std::size_t(idx[std::size_t(r)])] - centroid);
    const Vec2d& uv = rays[std::size_t(idx[std::size_t(r)])];
    Eigen::RowVector4d xh;
    xh << xn.x(), xn.y(), xn.z(), 1.0;
    a.block<1, 4>(2 * r, 0) = -xh;
    a.block<1, 4>(2 * r, 8) = uv.x() * xh;
    a.block<1, 4>(2 * r + 1, 4) = -xh;
    a.block<1, 4>(2 * r + 1, 8) = uv.y() * xh;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU |
                                               Eigen::ComputeFullV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> proj;
  proj.row(0) = p.segment<4>(0).transpose();
  proj.row(1) = p.segment<4>(4).transpose();
  proj.row(2) = p.segment<4>(8).transpose();

  // Undo the similarity: X_norm = s (X - centroid).
  Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
  t3.topLeftCorner<3, 3>() *= s;
  t3.topRightCorner<3, 1>() = -s * centroid;
  proj = proj * t3;

  auto decode = [&](const Eigen::Matrix<double, 3, 4>& pm)
      -> std::optional<SE3Pose<double>> {
    Eigen::JacobiSVD<Mat3d> rsvd(pm.leftCols<3>(),
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double det_sign =
        (rsvd.matrixU() * rsvd.matrixV().transpose()).determinant() < 0 ? -1.0
                                                                        : 1.0;
    Vec3d fix(1, 1, det_sign);
    const Mat3d rot =
        rsvd.matrixU() * fix.asDiagonal() * rsvd.matrixV().transpose();
    const double alpha = (rsvd.singularValues()(0) + rsvd.singularValues()(1) +
                          det_sign * rsvd.singularValues()(2)) /
                         3.0;
    if (!(alpha > 0) || !std::isfinite(alpha)) return std::nullopt;
    SE3Pose<double> pose{rot, pm.rightCols<1>() / alpha};
    return pose;
  };

  const auto pos = decode(proj);
  const auto neg = decode(-proj);
  auto depth_score = [&](const std::optional<SE3Pose<double>>& pose) {
    if (!pose) return -1;
    int good = 0;
    for (int i : idx)
      if (pose->apply(points[std::size_t(i)]).z() > 0) ++good;
    return good;
  };
  const int sp = depth_score(pos), sn = depth_score(neg);
  if (sp < 0 && sn < 0) return std::nullopt;
  return sp >= sn ? pos : neg;
}

/// Damped Gauss-Newton on pixel reprojection, stepping a left-multiplied
/// twist. Returns false if the iterate loses all positive depths.
inline bool pnp_refine(const std::vector<Vec3d>& points,
                       const std::vector<Vec2d>& pixels,
                       const CameraIntrinsics<double>& intr,
                       const std::vector<int>& idx, const PnPOptions& opt,
                       SE3Pose<double>& pose) {
  for (int it = 0; it < opt.gn_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6d g = Vec6d::Zero();
    int used = 0;
    for (int i : idx) {
      const Vec3d xc = pose.apply(points[std::size_t(i)]);
      if (!(xc.z() > kZNear)) continue;
      const Vec2d res(intr.fx * xc.x() / xc.z() + intr.cx - pixels[std::size_t(i)].x(),
                      intr.fy * xc.y() / xc.z() + intr.cy - pixels[std::size_t(i)].y());
      const auto [jac_pt, jac_twist] =
          projection_jacobian(intr, pose, points[std::size_t(i)]);
      (void)jac_pt;
      h += jac_twist.transpose() * jac_twist;
      g += jac_twist.transpose() * res;
      ++used;
    }
    if (used < 3) return false;
    h.diagonal().array() += 1e-12;  // keep the solve well posed
    const Vec6d step = h.ldlt().solve(-g);
    if (!step.allFinite()) return false;
    pose = se3_compose(se3_exp(step), pose);
    if (step.norm() < opt.gn_step_tol) break;
  }
  return true;
}

inline double reproj_error_px(const SE3Pose<double>& pose, const Vec3d& point,
                              const Vec2d& pixel,
                              const CameraIntrinsics<double>& intr) {
  const Vec3d xc = pose.apply(point);
  if (!(xc.z() > kZNear)) return std::numeric_limits<double>::infinity();
  const Vec2d uv(intr.fx * xc.x() / xc.z() + intr.cx,
                 intr.fy * xc.y() / xc.z() + intr.cy);
  return (uv - pixel).norm();
}

/// Smallest-over-largest eigenvalue of the sample's positional spread.
inline double sample_spread_ratio(const std::vector<Vec3d>& points,
                                  const std::vector<int>& idx) {
  Vec3d mean = Vec3d::Zero();
  for (int i : idx) mean += points[std::size_t(i)];
  mean /= double(idx.size());
  Mat3d cov = Mat3d::Zero();
  for (int i : idx) {
    const Vec3d d = points[std::size_t(i)] - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3d> eig(cov);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
  if (!(hi > 0)) return 0.0;
  return std::max(0.0, lo) / hi;
}

}  // namespace detail

/// RANSAC + DLT + Gauss-Newton pose solve from 2D-3D correspondences.
/// Fully deterministic for a fixed seed: candidate models are compared
/// by strict inlier count, so earlier rounds win ties.
inline PnPResult solve_pnp(const std::vector<Vec3d>& points,
                           const std::vector<Vec2d>& pixels,
                           const CameraIntrinsics<double>& intr,
                           const PnPOptions& opt = {}) {
  PnPResult result;
  const int n = int(points.size());
  if (n < opt.min_sample || points.size() != pixels.size()) {
    result.status = PnPStatus::kTooFewPoints;
    return result;
  }

  // Pre-divide by the intrinsics once; the DLT never sees pixels.
  std::vector<Vec2d> rays(points.size());
  for (int i = 0; i < n; ++i)
    rays[std::size_t(i)] = {(pixels[std::size_t(i)].x() - intr.cx) / intr.fx,
                            (pixels[std::size_t(i)].y() - intr.cy) / intr.fy};

  Rng rng(opt.seed);
  std::vector<int> sample(std::size_t(opt.min_sample));
  std::vector<int> best_inliers;
  SE3Pose<double> best_pose;
  int needed = opt.max_iterations;

  for (int it = 0; it < needed; ++it) {
    ++result.iterations;
    // Distinct draw; retries stay inside the round.
    for (int k = 0; k < opt.min_sample; ++k) {
      int pick;
      bool fresh;
      do {
        pick = int(rng.index(std::uint64_t(n)));
        fresh = true;
        for (int j = 0; j < k; ++j)
          if (sample[std::size_t(j)] == pick) fresh = false;
      } while (!fresh);
      sample[std::size_t(k)] = pick;
    }
    if (detail::sample_spread_ratio(points, sample) < opt.degeneracy_tol)
      continue;
    const auto model = detail::pnp_dlt(points, rays, sample);
    if (!model) continue;

    std::vector<int> inliers;
    for (int i = 0; i < n; ++i)
      if (detail::reproj_error_px(*model, points[std::size_t(i)],
                                  pixels[std::size_t(i)],
                                  intr) <= opt.threshold_px)
        inliers.push_back(i);
    if (inliers.size() > best_inliers.size()) {
      best_inliers = std::move(inliers);
      best_pose = *model;
      const double w = double(best_inliers.size()) / double(n);
      const double denom = std::log(
          std::max(1e-12, 1.0 - std::pow(w, double(opt.min_sample))));
      if (denom < 0) {
        // Clamp in double first: with a near-useless consensus the round
        // estimate can exceed the integer range.
        const double est = std::ceil(std::log(1.0 - opt.confidence) / denom);
        needed = int(std::clamp(est, double(it + 1), double(opt.max_iterations)));
      }
    }
  }

  if (double(best_inliers.size()) < opt.min_inlier_ratio * double(n) ||
      int(best_inliers.size()) < opt.min_sample) {
    result.status = PnPStatus::kNoConsensus;
    return result;
  }

  // Re-estimate on the consensus set, then polish and re-score once.
  if (auto refit = detail::pnp_dlt(points, rays, best_inliers)) best_pose = *refit;
  detail::pnp_refine(points, pixels, intr, best_inliers, opt, best_pose);
  std::vector<int> final_inliers;
  for (int i = 0; i < n; ++i)
    if (detail::reproj_error_px(best_pose, points[std::size_t(i)],
                                pixels[std::size_t(i)],
                                intr) <= opt.threshold_px)
      final_inliers.push_back(i);
  if (final_inliers.size() >= best_inliers.size())
    best_inliers = std::move(final_inliers);
  detail::pnp_refine(points, pixels, intr, best_inliers, opt, best_pose);

  double ss = 0;
  for (int i : best_inliers)
    ss += sq(detail::reproj_error_px(best_pose, points[std::size_t(i)],
                                     pixels[std::size_t(i)], intr));
  result.status = PnPStatus::kOk;
  result.cam_from_world = best_pose;
  result.inliers = std::move(best_inliers);
  result.rms_px = std::sqrt(ss / double(result.inliers.size()));
  return result;
}

}  // namespace usplat
