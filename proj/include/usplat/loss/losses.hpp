#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "usplat/core/camera.hpp"
#include "usplat/core/gaussian.hpp"
#include "usplat/core/image.hpp"
#include "usplat/core/se3.hpp"
#include "usplat/metrics/ssim.hpp"
#include "usplat/render/backward.hpp"

namespace usplat {

enum class ReprojNorm { kL2, kL1 };
enum class Reduction { kMean, kSum };
enum class Perceptual { kDssim, kNone };

template <typename T>
struct LossConfig {
  T gamma_perceptual = T(0.05);  // weight of the structural term
  T lambda_reproj = T(0.001);
  T w_rot = T(0.1);    // supervised-pose rotation weight
  T w_trans = T(0.01); // supervised-pose translation weight
  ReprojNorm reproj_norm = ReprojNorm::kL2;
  Reduction reduction = Reduction::kMean;
  T clamp_px = T(50);  // penalty for a center behind its camera
  Perceptual perceptual = Perceptual::kDssim;
  bool render_context_views = false;  // photometric loss on context views too

  template <typename U> LossConfig<U> cast() const {
    LossConfig<U> c;
    c.gamma_perceptual = U(gamma_perceptual);
    c.lambda_reproj = U(lambda_reproj);
    c.w_rot = U(w_rot);
    c.w_trans = U(w_trans);
    c.reproj_norm = reproj_norm;
    c.reduction = reduction;
    c.clamp_px = U(clamp_px);
    c.perceptual = perceptual;
    c.render_context_views = render_context_views;
    return c;
  }
};

/// Photometric target loss: MSE plus a weighted structural-dissimilarity
/// term. A zero weight skips the structural term entirely, so the result
/// is bitwise identical to plain MSE.
template <typename T>
T rendering_loss(const Image<T>& ref, const Image<T>& img,
                 const LossConfig<T>& cfg) {
  T loss = image_mse(ref, img);
  if (cfg.perceptual == Perceptual::kDssim && cfg.gamma_perceptual != T(0))
    loss += cfg.gamma_perceptual * (T(1) - ssim(ref, img)) / T(2);
  return loss;
}

/// Same, accumulating d(loss)/d(img) * d_upstream into d_img.
template <typename T>
T rendering_loss_backward(const Image<T>& ref, const Image<T>& img,
                          const LossConfig<T>& cfg, T d_upstream,
                          Image<T>& d_img) {
  if (!same_shape(ref, img))
    throw std::invalid_argument("rendering_loss: shape mismatch");
  T loss = image_mse(ref, img);
  const T scale = d_upstream * T(2) / T(3 * ref.width() * ref.height());
  for (int c = 0; c < 3; ++c) d_img.ch[c] += scale * (img.ch[c] - ref.ch[c]);
  if (cfg.perceptual == Perceptual::kDssim && cfg.gamma_perceptual != T(0)) {
    const T s =
        ssim_backward(ref, img, -d_upstream * cfg.gamma_perceptual / T(2), d_img);
    loss += cfg.gamma_perceptual * (T(1) - s) / T(2);
  }
  return loss;
}

/// Pixel-space consistency of pixel-aligned gaussians: each center,
/// pushed through its own context camera, should land on the pixel it
/// was spawned from. Centers that fall behind their camera incur the
/// constant clamp penalty and no gradient.
///
/// cam_from_world / intr are indexed by view_index. Gradients (scaled by
/// d_upstream) accumulate into d_scene and per-view d_pose when given.
template <typename T>
T reprojection_loss(const Scene<T>& scene, const SceneAlignment& alignment,
                    const std::vector<SE3Pose<T>>& cam_from_world,
                    const std::vector<CameraIntrinsics<T>>& intr,
                    const LossConfig<T>& cfg, T d_upstream = T(1),
                    SceneGrad<T>* d_scene = nullptr,
                    std::vector<PoseGrad<T>>* d_pose = nullptr) {
  if (alignment.total() != scene.size())
    throw std::invalid_argument("reprojection_loss: alignment mismatch");
  std::size_t pixel_count = 0;
  for (const auto& b : alignment.blocks)
    pixel_count += std::size_t(b.width) * b.height;
  if (pixel_count == 0) throw std::invalid_argument("reprojection_loss: empty");
  const T normalizer =
      cfg.reduction == Reduction::kMean ? T(1) / T(pixel_count) : T(1);

  T total = T(0);
  for (const auto& b : alignment.blocks) {
    const auto& cam = cam_from_world.at(std::size_t(b.view_index));
    const auto& in = intr.at(std::size_t(b.view_index));
    for (int py = 0; py < b.height; ++py)
      for (int px = 0; px < b.width; ++px) {
        const std::size_t gi =
            b.offset + std::size_t(py) * b.width + px;
        const Vec3<T>& center = scene.gaussians[gi].center;
        const Vec3<T> xc = cam.apply(center);
        if (!(xc.z() > T(kZNear))) {
          total += cfg.clamp_px;
          continue;
        }
        const Vec2<T> pix(in.fx * xc.x() / xc.z() + in.cx,
                          in.fy * xc.y() / xc.z() + in.cy);
        const Vec2<T> r(pix.x() - (T(px) + T(0.5)),
                        pix.y() - (T(py) + T(0.5)));
        Vec2<T> d_r = Vec2<T>::Zero();
        if (cfg.reproj_norm == ReprojNorm::kL2) {
          const T n = r.norm();
          total += n;
          if (n > T(1e-12)) d_r = r / n;
        } else {
          total += std::abs(r.x()) + std::abs(r.y());
          d_r = {r.x() > T(0) ? T(1) : (r.x() < T(0) ? T(-1) : T(0)),
                 r.y() > T(0) ? T(1) : (r.y() < T(0) ? T(-1) : T(0))};
        }
        if (!d_scene && !d_pose) continue;
        const Mat23<T> jac = pixel_jacobian_wrt_cam_point(in, xc);
        const Vec3<T> d_xc =
            jac.transpose() * (d_upstream * normalizer * d_r);
        if (d_scene)
          d_scene->center[gi] += cam.rotation.transpose() * d_xc;
        if (d_pose) {
          auto& pg = d_pose->at(std::size_t(b.view_index));
          pg.rotation += d_xc * center.transpose();
          pg.translation += d_xc;
        }
      }
  }
  return total * normalizer;
}

/// Gradient of a supervised pose residual, w.r.t. the predicted
/// view-to-canonical transform.
template <typename T>
struct PoseResidualGrad {
  Mat3<T> rotation = Mat3<T>::Zero();
  Vec3<T> translation = Vec3<T>::Zero();
};

/// Supervised pose loss: rotation geodesic angle plus squared
/// translation distance, averaged over every view after the first
/// (which is pinned to identity on both sides).
template <typename T>
T pose_supervision_loss(const std::vector<SE3Pose<T>>& pred,
                        const std::vector<SE3Pose<T>>& gt,
                        const LossConfig<T>& cfg, T d_upstream = T(1),
                        std::vector<PoseResidualGrad<T>>* d_pred = nullptr) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("pose_supervision_loss: view count mismatch");
  if (d_pred) d_pred->assign(pred.size(), {});
  if (pred.size() < 2) return T(0);
  const T inv_n = T(1) / T(pred.size() - 1);
  T total = T(0);
  for (std::size_t v = 1; v < pred.size(); ++v) {
    const T cos_theta = std::clamp(
        ((gt[v].rotation.transpose() * pred[v].rotation).trace() - T(1)) / T(2),
        T(-1), T(1));
    const T theta = std::acos(cos_theta);
    const Vec3<T> dt = pred[v].translation - gt[v].translation;
    total += cfg.w_rot * theta + cfg.w_trans * dt.squaredNorm();
    if (!d_pred) continue;
    auto& g = (*d_pred)[v];
    const T sin_theta = std::sqrt(std::max(T(0), T(1) - cos_theta * cos_theta));
    if (sin_theta > T(1e-7)) {
      // d(theta)/dR = -R_gt / (2 sin(theta))
      g.rotation += d_upstream * inv_n * cfg.w_rot *
                    (-T(1) / (T(2) * sin_theta)) * gt[v].rotation;
    }
    g.translation += d_upstream * inv_n * cfg.w_trans * T(2) * dt;
  }
  return total * inv_n;
}

}  // namespace usplat
