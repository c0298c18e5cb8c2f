#pragma once

#include <cmath>
#include <vector>

#include "usplat/render/forward.hpp"

namespace usplat {

/// Gradients for every scene parameter, mirroring Scene layout.
template <typename T>
struct SceneGrad {
  std::vector<Vec3<T>> center;
  std::vector<Vec4<T>> rotation;  // w.r.t. the raw (pre-normalization) quat
  std::vector<Vec3<T>> log_scale;
  std::vector<T> opacity_logit;
  std::vector<ShVec<T>> sh;

  void resize_like(const Scene<T>& scene) {
    const std::size_t n = scene.size();
    center.assign(n, Vec3<T>::Zero());
    rotation.assign(n, Vec4<T>::Zero());
    log_scale.assign(n, Vec3<T>::Zero());
    opacity_logit.assign(n, T(0));
    sh.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      sh[i].count = scene.gaussians[i].sh.count;
      sh[i].coeffs.fill(Vec3<T>::Zero());
    }
  }

  void set_zero() {
    for (auto& v : center) v.setZero();
    for (auto& v : rotation) v.setZero();
    for (auto& v : log_scale) v.setZero();
    for (auto& v : opacity_logit) v = T(0);
    for (auto& v : sh) v.coeffs.fill(Vec3<T>::Zero());
  }
};

/// Gradient w.r.t. the camera-from-world transform used for a render.
template <typename T>
struct PoseGrad {
  Mat3<T> rotation = Mat3<T>::Zero();
  Vec3<T> translation = Vec3<T>::Zero();

  PoseGrad& operator+=(const PoseGrad& o) {
    rotation += o.rotation;
    translation += o.translation;
    return *this;
  }
};

namespace detail {

/// One recorded sample along a pixel's ray.
template <typename T>
struct Contribution {
  int vis = 0;      // index into the projected splat list
  T weight = T(0);  // post-clamp sample opacity
  T tr = T(0);      // transmittance before this sample
  bool clamped = false;
  T gauss = T(0);   // exp(-quad/2), pre-opacity
};

/// Per-splat screen-space gradient accumulators.
template <typename T>
struct ScreenGrad {
  std::vector<Vec3<T>> color;
  std::vector<T> opacity;  // w.r.t. sigmoid(opacity_logit)
  std::vector<Vec2<T>> mean2d;
  std::vector<Mat2<T>> conic;
  std::vector<T> depth;

  explicit ScreenGrad(std::size_t n)
      : color(n, Vec3<T>::Zero()),
        opacity(n, T(0)),
        mean2d(n, Vec2<T>::Zero()),
        conic(n, Mat2<T>::Zero()),
        depth(n, T(0)) {}

  void add(const ScreenGrad& o) {
    for (std::size_t i = 0; i < color.size(); ++i) {
      color[i] += o.color[i];
      opacity[i] += o.opacity[i];
      mean2d[i] += o.mean2d[i];
      conic[i] += o.conic[i];
      depth[i] += o.depth[i];
    }
  }
};

/// Reverse sweep over one pixel. Replays the composite to recover each
/// sample's transmittance, then walks the samples back to front keeping
/// suffix sums of everything behind the current sample.
template <typename T>
void pixel_backward(const std::vector<SplatProjection<T>>& splats,
                    const int* cand, int n_cand, int x, int y,
                    const Vec3<T>& d_rgb, T d_alpha, T d_depth,
                    const RenderOptions<T>& opt,
                    std::vector<Contribution<T>>& scratch,
                    ScreenGrad<T>& acc) {
  const T px = T(x) + T(0.5), py = T(y) + T(0.5);
  scratch.clear();
  T t_final = T(1);
  composite_pixel(splats, cand, n_cand, px, py, opt,
                  [&](int s, T weight, T transmittance) {
                    const T g = weight / splats[s].opacity;
                    scratch.push_back({s, weight, transmittance,
                                       weight >= opt.alpha_clamp, g});
                    t_final = transmittance * (T(1) - weight);
                  });
  if (scratch.empty()) return;

  Vec3<T> suffix_rgb = t_final * opt.background;
  T suffix_alpha = T(0), suffix_depth = T(0);
  for (int k = int(scratch.size()) - 1; k >= 0; --k) {
    const auto& c = scratch[std::size_t(k)];
    const SplatProjection<T>& s = splats[c.vis];
    const T rest = T(1) - c.weight;
    const T coeff = c.tr * c.weight;

    acc.color[c.vis] += coeff * d_rgb;
    acc.depth[c.vis] += coeff * d_depth;

    T d_weight = d_rgb.dot(c.tr * s.color - suffix_rgb / rest) +
                 d_alpha * (c.tr - suffix_alpha / rest) +
                 d_depth * (c.tr * s.depth - suffix_depth / rest);

    suffix_rgb += coeff * s.color;
    suffix_alpha += coeff;
    suffix_depth += coeff * s.depth;

    if (c.clamped) continue;  // the opacity ceiling kills the gradient

    acc.opacity[c.vis] += d_weight * c.gauss;
    const T d_quad = T(-0.5) * c.weight * d_weight;
    const Vec2<T> d(px - s.mean2d.x(), py - s.mean2d.y());
    const Vec2<T> conic_d = s.conic * d;
    acc.mean2d[c.vis] += d_quad * T(-2) * conic_d;
    acc.conic[c.vis] += d_quad * (d * d.transpose());
  }
}

}  // namespace detail

/// Accumulates dL/d(scene params) and, optionally, dL/d(camera pose)
/// given upstream gradients on the rendered color / alpha / depth maps.
/// Null upstream maps are treated as zero. Results are added into
/// d_scene / d_pose so callers can fold multiple views together.
template <typename T>
void render_backward(const Scene<T>& scene, const SE3Pose<T>& cam_from_world,
                     const CameraIntrinsics<T>& intr, const Image<T>& d_rgb,
                     const ArrayXX<T>* d_alpha, const ArrayXX<T>* d_depth,
                     const RenderOptions<T>& opt, SceneGrad<T>& d_scene,
                     PoseGrad<T>* d_pose = nullptr) {
  const int w = intr.width, h = intr.height;
  const auto splats = project_scene(scene, cam_from_world, intr, opt);
  if (splats.empty()) return;

  // Pass 1: per-pixel reverse sweeps, sharded per worker and then
  // reduced in worker order so the sum never depends on scheduling.
  const auto tb = detail::bin_splats(splats, w, h);
  const int workers = effective_workers(tb.tiles_y, opt.threads);
  std::vector<detail::ScreenGrad<T>> shards(std::size_t(workers),
                                            detail::ScreenGrad<T>(splats.size()));
  std::vector<int> all;
  if (!opt.use_tiles) {
    all.resize(splats.size());
    for (int i = 0; i < int(splats.size()); ++i) all[i] = i;
  }

  parallel_for_blocks(tb.tiles_y, opt.threads, [&](int ty, int worker) {
    auto& acc = shards[std::size_t(worker)];
    std::vector<detail::Contribution<T>> scratch;
    for (int tx = 0; tx < tb.tiles_x; ++tx) {
      const auto& bin = tb.bins[std::size_t(ty) * tb.tiles_x + tx];
      const int* cand = opt.use_tiles ? bin.data() : all.data();
      const int n_cand = opt.use_tiles ? int(bin.size()) : int(all.size());
      const int y_end = std::min(h, (ty + 1) * detail::kTileSize);
      const int x_end = std::min(w, (tx + 1) * detail::kTileSize);
      for (int y = ty * detail::kTileSize; y < y_end; ++y)
        for (int x = tx * detail::kTileSize; x < x_end; ++x) {
          const Vec3<T> g_rgb = d_rgb.at(x, y);
          const T g_a = d_alpha ? (*d_alpha)(y, x) : T(0);
          const T g_d = d_depth ? (*d_depth)(y, x) : T(0);
          if (g_rgb.isZero(T(0)) && g_a == T(0) && g_d == T(0)) continue;
          detail::pixel_backward(splats, cand, n_cand, x, y, g_rgb, g_a, g_d,
                                 opt, scratch, acc);
        }
    }
  });
  for (int s = 1; s < workers; ++s) shards[0].add(shards[std::size_t(s)]);
  const detail::ScreenGrad<T>& screen = shards[0];

  // Pass 2: pull screen-space gradients back through the projection,
  // covariance, and shading chains of each visible gaussian.
  const Mat3<T>& w_rot = cam_from_world.rotation;
  const Vec3<T> cam_center = -(w_rot.transpose() * cam_from_world.translation);
  PoseGrad<T> pose_acc;

  for (std::size_t v = 0; v < splats.size(); ++v) {
    const auto& p = splats[v];
    const auto& g = scene.gaussians[std::size_t(p.index)];
    const Vec3<T> xc = cam_from_world.apply(g.center);
    Vec3<T> d_xc = Vec3<T>::Zero();

    // Shading: clamp -> basis expansion -> direction normalization.
    {
      const Vec3<T> dir_raw = g.center - cam_center;
      const T dir_norm = dir_raw.norm();
      const Vec3<T> dir = dir_raw / dir_norm;
      const Vec3<T> raw = sh_color_raw(g.sh, dir);
      Vec3<T> d_raw = screen.color[v];
      for (int ci = 0; ci < 3; ++ci)
        if (raw[ci] <= T(0)) d_raw[ci] = T(0);

      T basis[kShMaxCoeffs];
      Vec3<T> basis_grad[kShMaxCoeffs];
      const int deg = g.sh.degree();
      sh_basis(deg, dir, basis);
      sh_basis_grad(deg, dir, basis_grad);
      auto& d_sh = d_scene.sh[std::size_t(p.index)];
      Vec3<T> d_dir = Vec3<T>::Zero();
      for (int b = 0; b < g.sh.count; ++b) {
        d_sh.coeffs[std::size_t(b)] += basis[b] * d_raw;
        d_dir += basis_grad[b] * g.sh.coeffs[std::size_t(b)].dot(d_raw);
      }
      const Vec3<T> d_dir_raw = (d_dir - dir * dir.dot(d_dir)) / dir_norm;
      d_scene.center[std::size_t(p.index)] += d_dir_raw;
      if (d_pose) {
        // cam_center = -R^T t, and the direction uses -cam_center.
        pose_acc.rotation +=
            cam_from_world.translation * d_dir_raw.transpose();
        pose_acc.translation += w_rot * d_dir_raw;
      }
    }

    // Opacity.
    {
      const T a = p.opacity;
      d_scene.opacity_logit[std::size_t(p.index)] +=
          screen.opacity[v] * a * (T(1) - a);
    }

    // Projected mean and expected-depth term.
    const Mat23<T> jac = pixel_jacobian_wrt_cam_point(intr, xc);
    d_xc += jac.transpose() * screen.mean2d[v];
    d_xc.z() += screen.depth[v];

    // Conic -> 2D covariance -> camera covariance -> world covariance.
    const Mat2<T> d_cov2 = -p.conic * screen.conic[v] * p.conic;
    const Mat3<T> cov3 = g.covariance();
    const Mat3<T> cam_cov = w_rot * cov3 * w_rot.transpose();
    const Mat2<T> d_cov2_sym = d_cov2 + d_cov2.transpose();
    const Mat23<T> d_jac = d_cov2_sym * jac * cam_cov;
    const Mat3<T> d_cam_cov = jac.transpose() * d_cov2 * jac;
    const Mat3<T> d_cov3 = w_rot.transpose() * d_cam_cov * w_rot;
    if (d_pose)
      pose_acc.rotation += (d_cam_cov + d_cam_cov.transpose()) * w_rot * cov3;

    // The EWA jacobian itself depends on the camera-space point.
    {
      const T z = xc.z(), z2 = z * z, z3 = z2 * z;
      d_xc.x() += d_jac(0, 2) * (-intr.fx / z2);
      d_xc.y() += d_jac(1, 2) * (-intr.fy / z2);
      d_xc.z() += d_jac(0, 0) * (-intr.fx / z2) + d_jac(1, 1) * (-intr.fy / z2) +
                  d_jac(0, 2) * (T(2) * intr.fx * xc.x() / z3) +
                  d_jac(1, 2) * (T(2) * intr.fy * xc.y() / z3);
    }

    // World covariance -> factor M = R diag(s) -> quaternion, log-scales.
    {
      const Vec4<T> q_unit = g.rotation.normalized();
      const Mat3<T> rot = unit_quat_to_rotation(q_unit);
      const Vec3<T> s = g.scale();
      const Mat3<T> m = rot * s.asDiagonal();
      const Mat3<T> d_m = (d_cov3 + d_cov3.transpose()) * m;
      const Mat3<T> d_rot = d_m * s.asDiagonal();
      const auto jq = unit_quat_to_rotation_jacobian(q_unit);
      Vec4<T> d_q_unit;
      for (int k = 0; k < 4; ++k)
        d_q_unit[k] = (jq[std::size_t(k)].array() * d_rot.array()).sum();
      d_scene.rotation[std::size_t(p.index)] +=
          quat_normalize_backward(g.rotation, d_q_unit);
      const Vec3<T> d_s = (rot.transpose() * d_m).diagonal();
      d_scene.log_scale[std::size_t(p.index)] += d_s.cwiseProduct(s);
    }

    // Camera transform of the center.
    d_scene.center[std::size_t(p.index)] += w_rot.transpose() * d_xc;
    if (d_pose) {
      pose_acc.rotation += d_xc * g.center.transpose();
      pose_acc.translation += d_xc;
    }
  }

  if (d_pose) *d_pose += pose_acc;
}

}  // namespace usplat
