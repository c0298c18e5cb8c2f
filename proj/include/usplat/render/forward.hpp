#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "usplat/core/camera.hpp"
#include "usplat/core/gaussian.hpp"
#include "usplat/core/image.hpp"
#include "usplat/core/parallel.hpp"
#include "usplat/core/se3.hpp"
#include "usplat/core/sh.hpp"
#include "usplat/core/types.hpp"

namespace usplat {

template <typename T>
struct RenderOptions {
  Vec3<T> background = Vec3<T>::Zero();
  T alpha_clamp = T(0.999);        // per-sample opacity ceiling
  T weight_cutoff = T(1) / T(255); // samples below this contribute nothing
  T transmittance_floor = T(1e-4); // early ray termination
  T dilation = T(0.3);             // screen-space covariance low-pass
  T z_near = T(kZNear);
  T bound_sigma = T(3.4);          // conservative footprint radius multiplier
  bool use_tiles = true;           // tiled path is bit-identical to brute force
  int threads = 1;

  template <typename U> RenderOptions<U> cast() const {
    RenderOptions<U> o;
    o.background = background.template cast<U>();
    o.alpha_clamp = U(alpha_clamp);
    o.weight_cutoff = U(weight_cutoff);
    o.transmittance_floor = U(transmittance_floor);
    o.dilation = U(dilation);
    o.z_near = U(z_near);
    o.bound_sigma = U(bound_sigma);
    o.use_tiles = use_tiles;
    o.threads = threads;
    return o;
  }
};

template <typename T>
struct RenderResult {
  Image<T> rgb;
  ArrayXX<T> alpha;  // accumulated opacity per pixel
  ArrayXX<T> depth;  // transmittance-weighted expected depth
};

/// Screen-space state of one visible gaussian.
template <typename T>
struct SplatProjection {
  int index = 0;  // position in the source scene
  Vec2<T> mean2d = Vec2<T>::Zero();
  Mat2<T> cov2d = Mat2<T>::Zero();  // dilated
  Mat2<T> conic = Mat2<T>::Zero();  // cov2d^-1
  T depth = T(0);
  T opacity = T(0);
  Vec3<T> color = Vec3<T>::Zero();
  T radius = T(0);  // pixels; no above-cutoff sample lies outside it
};

namespace detail {

constexpr int kTileSize = 16;

/// EWA linearization of the projection at camera-space point xc.
/// Identical to pixel_jacobian_wrt_cam_point; restated here so the
/// renderer can be read standalone.
template <typename T>
Mat2<T> project_covariance(const Mat23<T>& jac, const Mat3<T>& w_rot,
                           const Mat3<T>& cov3d, T dilation) {
  const Mat3<T> cam_cov = w_rot * cov3d * w_rot.transpose();
  Mat2<T> cov2 = jac * cam_cov * jac.transpose();
  cov2(0, 0) += dilation;
  cov2(1, 1) += dilation;
  return cov2;
}

template <typename T>
T largest_eigenvalue_2x2(const Mat2<T>& m) {
  const T half_trace = (m(0, 0) + m(1, 1)) / T(2);
  const T det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  const T disc = std::sqrt(std::max(T(0), half_trace * half_trace - det));
  return half_trace + disc;
}

}  // namespace detail

/// Culls, projects, colors, and depth-sorts the scene for one camera.
/// The returned list is ordered front to back; ties break on scene index
/// so the composite order never depends on sort internals.
template <typename T>
std::vector<SplatProjection<T>> project_scene(
    const Scene<T>& scene, const SE3Pose<T>& cam_from_world,
    const CameraIntrinsics<T>& intr, const RenderOptions<T>& opt) {
  const Vec3<T> cam_center =
      -(cam_from_world.rotation.transpose() * cam_from_world.translation);
  std::vector<SplatProjection<T>> out;
  out.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& g = scene.gaussians[i];
    const Vec3<T> xc = cam_from_world.apply(g.center);
    if (!(xc.z() > opt.z_near)) continue;

    SplatProjection<T> p;
    p.index = int(i);
    p.depth = xc.z();
    p.mean2d = {intr.fx * xc.x() / xc.z() + intr.cx,
                intr.fy * xc.y() / xc.z() + intr.cy};

    const Mat23<T> jac = pixel_jacobian_wrt_cam_point(intr, xc);
    p.cov2d = detail::project_covariance(jac, cam_from_world.rotation,
                                         g.covariance(), opt.dilation);
    const T det = p.cov2d(0, 0) * p.cov2d(1, 1) - p.cov2d(0, 1) * p.cov2d(1, 0);
    if (!(det > T(0))) continue;
    p.conic << p.cov2d(1, 1) / det, -p.cov2d(0, 1) / det,
               -p.cov2d(1, 0) / det, p.cov2d(0, 0) / det;
    p.radius =
        opt.bound_sigma * std::sqrt(detail::largest_eigenvalue_2x2(p.cov2d));

    p.opacity = sigmoid(g.opacity_logit);
    const Vec3<T> dir = (g.center - cam_center).normalized();
    p.color = sh_color(g.sh, dir);
    out.push_back(p);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SplatProjection<T>& a, const SplatProjection<T>& b) {
                     if (a.depth != b.depth) return a.depth < b.depth;
                     return a.index < b.index;
                   });
  return out;
}

namespace detail {

/// Front-to-back composite of one pixel over a candidate list given by
/// indices into `splats`. The candidate order must match the global
/// depth order. Visitor is called once per *contributing* sample with
/// (candidate position, sample opacity, transmittance before the sample).
template <typename T, typename Visitor>
void composite_pixel(const std::vector<SplatProjection<T>>& splats,
                     const int* cand, int n_cand, T px, T py,
                     const RenderOptions<T>& opt, Visitor&& visit) {
  T transmittance = T(1);
  for (int c = 0; c < n_cand; ++c) {
    const SplatProjection<T>& s = splats[cand[c]];
    const Vec2<T> d(px - s.mean2d.x(), py - s.mean2d.y());
    const T quad = d.dot(s.conic * d);
    if (!(quad < T(23.2))) continue;  // exp(-11.6) is far below any cutoff
    const T weight = std::min(opt.alpha_clamp,
                              s.opacity * std::exp(T(-0.5) * quad));
    if (weight < opt.weight_cutoff) continue;
    visit(cand[c], weight, transmittance);
    transmittance *= (T(1) - weight);
    if (transmittance < opt.transmittance_floor) break;
  }
}

template <typename T>
struct TileBins {
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<int>> bins;  // candidate lists in global order
};

template <typename T>
TileBins<T> bin_splats(const std::vector<SplatProjection<T>>& splats, int width,
                       int height) {
  TileBins<T> tb;
  tb.tiles_x = (width + kTileSize - 1) / kTileSize;
  tb.tiles_y = (height + kTileSize - 1) / kTileSize;
  tb.bins.assign(std::size_t(tb.tiles_x) * tb.tiles_y, {});
  for (int s = 0; s < int(splats.size()); ++s) {
    const auto& p = splats[s];
    // One pixel of slack on either side keeps the bound conservative.
    const T r = p.radius + T(1);
    const int x0 = std::max(0, int(std::floor(p.mean2d.x() - r)) / kTileSize);
    const int y0 = std::max(0, int(std::floor(p.mean2d.y() - r)) / kTileSize);
    const int x1 = std::min(tb.tiles_x - 1,
                            int(std::floor(p.mean2d.x() + r)) / kTileSize);
    const int y1 = std::min(tb.tiles_y - 1,
                            int(std::floor(p.mean2d.y() + r)) / kTileSize);
    if (p.mean2d.x() + r < T(0) || p.mean2d.y() + r < T(0)) continue;
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        tb.bins[std::size_t(ty) * tb.tiles_x + tx].push_back(s);
  }
  return tb;
}

}  // namespace detail

/// Rasterizes the scene into color, accumulated alpha, and expected
/// depth. `cam_from_world` maps world (canonical) points into the
/// camera frame.
template <typename T>
RenderResult<T> render(const Scene<T>& scene, const SE3Pose<T>& cam_from_world,
                       const CameraIntrinsics<T>& intr,
                       const RenderOptions<T>& opt = {}) {
  const int w = intr.width, h = intr.height;
  RenderResult<T> res;
  res.rgb.resize(w, h);
  res.alpha = ArrayXX<T>::Zero(h, w);
  res.depth = ArrayXX<T>::Zero(h, w);

  const auto splats = project_scene(scene, cam_from_world, intr, opt);

  auto shade_pixel = [&](int x, int y, const int* cand, int n_cand) {
    const T px = T(x) + T(0.5), py = T(y) + T(0.5);
    Vec3<T> color = Vec3<T>::Zero();
    T alpha = T(0), depth = T(0), t_final = T(1);
    detail::composite_pixel(
        splats, cand, n_cand, px, py, opt,
        [&](int s, T weight, T transmittance) {
          const T coeff = transmittance * weight;
          color += coeff * splats[s].color;
          alpha += coeff;
          depth += coeff * splats[s].depth;
          t_final = transmittance * (T(1) - weight);
        });
    color += t_final * opt.background;
    res.rgb.set(x, y, color);
    res.alpha(y, x) = alpha;
    res.depth(y, x) = depth;
  };

  if (!opt.use_tiles) {
    std::vector<int> all(splats.size());
    for (int i = 0; i < int(splats.size()); ++i) all[i] = i;
    parallel_for_blocks(h, opt.threads, [&](int y, int) {
      for (int x = 0; x < w; ++x) shade_pixel(x, y, all.data(), int(all.size()));
    });
    return res;
  }

  const auto tb = detail::bin_splats(splats, w, h);
  parallel_for_blocks(tb.tiles_y, opt.threads, [&](int ty, int) {
    for (int tx = 0; tx < tb.tiles_x; ++tx) {
      const auto& bin = tb.bins[std::size_t(ty) * tb.tiles_x + tx];
      const int y_end = std::min(h, (ty + 1) * detail::kTileSize);
      const int x_end = std::min(w, (tx + 1) * detail::kTileSize);
      for (int y = ty * detail::kTileSize; y < y_end; ++y)
        for (int x = tx * detail::kTileSize; x < x_end; ++x)
          shade_pixel(x, y, bin.data(), int(bin.size()));
    }
  });
  return res;
}

}  // namespace usplat
