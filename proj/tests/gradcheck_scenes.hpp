#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "test_util.hpp"
#include "usplat/opt/optimizer.hpp"

// Construction of small joint-recovery problems whose objective is
// provably smooth in a neighborhood of the evaluation point, so central
// differences at h ~ 1e-5 are a valid oracle for the analytic gradients.
// The rasterizer's discrete decisions (weight cutoff, transmittance
// floor) plus the depth sort, opacity clamp, color clamp at zero, and
// the reprojection clamps all get verified margins around the sample;
// the generator resamples until every margin holds.

namespace usplat::testutil {

struct GradcheckProblem {
  OptimState<double> state;
  RecoveryProblem<double> problem;
  OptimConfig<double> config;
};

namespace detail {

/// True when no discrete rasterizer decision for this view can flip
/// anywhere on the FD stencil. Only two per-sample decisions exist: the
/// weight cutoff and the transmittance-floor break (the footprint radius
/// and tile bounds are conservative over-approximations, and a sample at
/// the quad bound carries weight far below any cutoff, so flips there
/// change nothing). An h = 1e-5 nudge of any single parameter moves a
/// per-sample weight by at most ~2e-3 relative once every projected
/// footprint keeps its smaller 2D eigenvalue above 1.1 px^2, so a
/// relative margin of w_band around the cutoff and t_band around the
/// floor pins every decision. Footprints near the opacity clamp are
/// rejected outright.
inline bool fd_margins_ok(const Scene<double>& scene, const SE3Pose<double>& w2c,
                          const CameraIntrinsics<double>& intr,
                          const RenderOptions<double>& opt,
                          double w_band = 6e-3, double t_band = 0.1) {
  const auto splats = project_scene(scene, w2c, intr, opt);
  for (const auto& s : splats) {
    const double half_tr = (s.cov2d(0, 0) + s.cov2d(1, 1)) / 2.0;
    const double det =
        s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(1, 0);
    const double lam_min =
        half_tr - std::sqrt(std::max(0.0, half_tr * half_tr - det));
    if (lam_min < 1.1) return false;
    if (s.opacity > 0.95 * opt.alpha_clamp) return false;
  }
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double transmittance = 1.0;
      for (const auto& s : splats) {
        const Vec2<double> d(px - s.mean2d.x(), py - s.mean2d.y());
        const double quad = d.dot(s.conic * d);
        if (!(quad < 23.2)) continue;
        const double weight =
            std::min(opt.alpha_clamp, s.opacity * std::exp(-0.5 * quad));
        if (std::abs(weight - opt.weight_cutoff) <
            w_band * opt.weight_cutoff)
          return false;
        if (weight < opt.weight_cutoff) continue;
        transmittance *= 1.0 - weight;
        if (std::abs(transmittance - opt.transmittance_floor) <
            t_band * opt.transmittance_floor)
          return false;
        if (transmittance < opt.transmittance_floor) break;
      }
    }
  return true;
}

inline Scene<double> random_backdrop(Rng& rng, int n) {
  Scene<double> scene;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive<double> g;
    g.center = Vec3<double>(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2),
                            rng.uniform(1.2, 3.5));
    Vec4<double> q;
    for (int k = 0; k < 4; ++k) q[k] = rng.normal();
    g.rotation = q.normalized();
    g.log_scale = Vec3<double>::Constant(std::log(0.08)) + rng.normal3() * 0.2;
    g.opacity_logit = rng.uniform(-1.0, 1.5);
    g.sh = ShVec<double>{1, {}};
    g.sh.coeffs[0] = sh_dc_from_rgb(Vec3<double>(
        rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)));
    scene.gaussians.push_back(g);
  }
  return scene;
}

}  // namespace detail

struct RenderCase {
  Scene<double> scene;
  SE3Pose<double> w2c;
  CameraIntrinsics<double> intr{40.0, 42.0, 16.2, 15.8, 32, 32};
  RenderOptions<double> opt;
};

/// A single rendered view with the same margin guarantees as the full
/// joint problems, for checking the rasterizer's backward pass on its
/// own (any spherical-harmonics order).
inline RenderCase make_smooth_render_case(std::uint64_t seed, int sh_count = 1,
                                          int n = 12) {
  Rng rng(seed * 7919ULL + 3);
  for (int attempt = 0; attempt < 500; ++attempt) {
    RenderCase rc;
    SE3Pose<double> c2w;
    c2w.rotation = rng.rotation_with_angle(0.3 * rng.uniform());
    c2w.translation = rng.normal3() * 0.1;
    rc.w2c = se3_inverse(c2w);
    rc.opt.background = Vec3<double>(0.15, 0.2, 0.25);

    bool ok = true;
    for (int k = 0; k < n && ok; ++k) {
      const double u = rng.uniform(4.0, 28.0);
      const double v = rng.uniform(4.0, 28.0);
      const double depth = rng.uniform(1.8, 3.0);
      GaussianPrimitive<double> g;
      g.center = c2w.apply(unproject(rc.intr, u, v, depth));
      Vec4<double> q;
      for (int j = 0; j < 4; ++j) q[j] = rng.normal();
      g.rotation = q.normalized();
      g.log_scale = Vec3<double>::Constant(std::log(0.08)) + rng.normal3() * 0.1;
      g.opacity_logit = rng.uniform(-1.5, 1.6);
      g.sh = ShVec<double>{sh_count, {}};
      g.sh.coeffs[0] = sh_dc_from_rgb(Vec3<double>(
          rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)));
      for (int c = 1; c < sh_count; ++c) g.sh.coeffs[std::size_t(c)] = rng.normal3() * 0.02;
      const Vec3<double> dir = (g.center - c2w.translation).normalized();
      if (sh_color_raw(g.sh, dir).minCoeff() < 0.02) { ok = false; break; }
      rc.scene.gaussians.push_back(g);
    }
    if (!ok) continue;

    std::vector<double> zs;
    for (const auto& g : rc.scene.gaussians) zs.push_back(rc.w2c.apply(g.center).z());
    std::sort(zs.begin(), zs.end());
    if (zs.front() < 0.5) continue;
    for (std::size_t i = 1; i < zs.size() && ok; ++i)
      if (zs[i] - zs[i - 1] < 1e-3) ok = false;
    if (!ok || !detail::fd_margins_ok(rc.scene, rc.w2c, rc.intr, rc.opt))
      continue;
    return rc;
  }
  throw std::runtime_error("make_smooth_render_case: no admissible sample");
}

/// One seeded problem: 20 pixel-aligned splats owned by context view 1,
/// a frozen identity reference view, and one free target view, over
/// 32x32 images. The photometric target comes from an unrelated scene so
/// residuals are generic.
inline GradcheckProblem make_gradcheck_problem(std::uint64_t seed) {
  Rng rng(seed * 1000003ULL + 17);
  const CameraIntrinsics<double> intr{35.0, 35.0, 16.0, 16.0, 32, 32};
  const int block_w = 5, block_h = 4;
  const int n = block_w * block_h;

  for (int attempt = 0; attempt < 500; ++attempt) {
    // View-to-canonical poses. The translations bias the free cameras
    // toward the image-origin corner the alignment block anchors at.
    SE3Pose<double> ctx1, tgt;
    ctx1.rotation = rng.rotation_with_angle(0.1 + 0.1 * rng.uniform());
    ctx1.translation = rng.normal3() * 0.1 + Vec3<double>(-0.2, -0.2, 0.0);
    tgt.rotation = rng.rotation_with_angle(0.1 + 0.1 * rng.uniform());
    tgt.translation = rng.normal3() * 0.1 + Vec3<double>(-0.3, -0.3, 0.0);
    const SE3Pose<double> w2c_ctx1 = se3_inverse(ctx1);
    const SE3Pose<double> w2c_tgt = se3_inverse(tgt);

    // Splat k is pixel-aligned to block pixel (k % w, k / w) of view 1:
    // unproject that pixel with a few pixels of jitter so reprojection
    // residuals are small but never vanish.
    Scene<double> scene;
    bool ok = true;
    for (int k = 0; k < n && ok; ++k) {
      const double u = double(k % block_w) + 0.5 + rng.uniform(-4.0, 4.0);
      const double v = double(k / block_w) + 0.5 + rng.uniform(-4.0, 4.0);
      const double depth = rng.uniform(2.0, 2.8);
      GaussianPrimitive<double> g;
      g.center = ctx1.apply(unproject(intr, u, v, depth));
      Vec4<double> q;
      for (int j = 0; j < 4; ++j) q[j] = rng.normal();
      g.rotation = q.normalized();
      g.log_scale = Vec3<double>::Constant(std::log(0.10)) + rng.normal3() * 0.06;
      g.opacity_logit = rng.uniform(-1.5, 1.6);
      g.sh = ShVec<double>{1, {}};
      g.sh.coeffs[0] = sh_dc_from_rgb(Vec3<double>(
          rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)));
      scene.gaussians.push_back(g);
    }

    // Margin audits. Everything below resamples the whole attempt.
    int visible = 0;
    for (int k = 0; k < n && ok; ++k) {
      const auto& g = scene.gaussians[std::size_t(k)];
      // Depth floors in both free views.
      const Vec3<double> in_ctx1 = w2c_ctx1.apply(g.center);
      const Vec3<double> in_tgt = w2c_tgt.apply(g.center);
      if (in_ctx1.z() < 0.5 || in_tgt.z() < 0.5) { ok = false; break; }
      // Color clamp margin along the rendered view direction.
      const Vec3<double> dir = (g.center - tgt.translation).normalized();
      if (sh_color_raw(g.sh, dir).minCoeff() < 0.02) { ok = false; break; }
      // Reprojection residual away from both the L2 kink and the clamp.
      const auto pix = try_project(intr, w2c_ctx1, g.center);
      if (!pix) { ok = false; break; }
      const double ru = pix->u - (double(k % block_w) + 0.5);
      const double rv = pix->v - (double(k / block_w) + 0.5);
      const double res = std::hypot(ru, rv);
      if (res < 5e-3 || res > 40.0) { ok = false; break; }
      // Target visibility census for gradient coverage.
      const auto tp = try_project(intr, w2c_tgt, g.center);
      if (tp && tp->u > 2 && tp->u < 30 && tp->v > 2 && tp->v < 30) ++visible;
    }
    if (ok && visible < 12) ok = false;

    // Unambiguous compositing order in the rendered view.
    if (ok) {
      std::vector<double> zs;
      for (const auto& g : scene.gaussians) zs.push_back(w2c_tgt.apply(g.center).z());
      std::sort(zs.begin(), zs.end());
      for (std::size_t i = 1; i < zs.size(); ++i)
        if (zs[i] - zs[i - 1] < 1e-3) { ok = false; break; }
    }
    if (!ok) continue;

    GradcheckProblem gp;
    gp.config.loss.gamma_perceptual = 0.05;
    gp.config.loss.lambda_reproj = 1e-3;
    gp.config.render.threads = 1;

    if (!detail::fd_margins_ok(scene, w2c_tgt, intr, gp.config.render)) continue;

    gp.state.scene = scene;
    gp.state.alignment.blocks = {SceneAlignment::ViewBlock{1, block_w, block_h, 0}};
    gp.state.context_poses = {Pose10D<double>::identity(), se3_to_pose10d(ctx1)};
    gp.state.target_poses = {se3_to_pose10d(tgt)};

    // Photometric observations from an unrelated backdrop scene.
    const Scene<double> backdrop = detail::random_backdrop(rng, 30);
    RenderOptions<double> obs = gp.config.render;
    obs.background = Vec3<double>(0.35, 0.35, 0.35);
    gp.problem.context_images = {
        render(backdrop, SE3Pose<double>{}, intr, obs).rgb,
        render(backdrop, w2c_ctx1, intr, obs).rgb};
    gp.problem.context_intr = {intr, intr};
    gp.problem.target_images = {render(backdrop, w2c_tgt, intr, obs).rgb};
    gp.problem.target_intr = {intr};
    return gp;
  }
  throw std::runtime_error("make_gradcheck_problem: no admissible sample");
}

struct ClassStats {
  int checked = 0;
  int failed = 0;
  double worst_rel = 0.0;
};

struct GradcheckReport {
  std::map<std::string, ClassStats> by_class;

  int checked() const {
    int c = 0;
    for (const auto& [k, v] : by_class) c += v.checked;
    return c;
  }
  int failed() const {
    int f = 0;
    for (const auto& [k, v] : by_class) f += v.failed;
    return f;
  }
  double worst() const {
    double w = 0;
    for (const auto& [k, v] : by_class) w = std::max(w, v.worst_rel);
    return w;
  }
};

/// Central-difference audit of every trainable parameter class against
/// the analytic gradients from evaluate_losses. A coordinate counts only
/// if either side is above `floor`; both-negligible coordinates carry no
/// signal either way.
inline GradcheckReport run_gradcheck(const GradcheckProblem& gp, double h = 1e-5,
                                     double rel_tol = 1e-3,
                                     double floor = 1e-8) {
  TotalGrads<double> grads;
  grads.resize(gp.state);
  grads.set_zero();
  evaluate_losses(gp.state, gp.problem, gp.config, &grads);

  GradcheckReport rep;
  OptimState<double> probe = gp.state;
  const auto loss_at = [&]() {
    return evaluate_losses(probe, gp.problem, gp.config,
                           static_cast<TotalGrads<double>*>(nullptr))
        .total;
  };
  const auto check1 = [&](const char* cls, double& slot, double analytic) {
    const double orig = slot;
    slot = orig + h;
    const double lp = loss_at();
    slot = orig - h;
    const double lm = loss_at();
    slot = orig;
    const double fd = (lp - lm) / (2 * h);
    if (std::abs(fd) <= floor && std::abs(analytic) <= floor) return;
    auto& st = rep.by_class[cls];
    ++st.checked;
    const double rel = rel_err(analytic, fd, floor);
    st.worst_rel = std::max(st.worst_rel, rel);
    if (rel >= rel_tol) ++st.failed;
  };

  for (std::size_t i = 0; i < probe.scene.size(); ++i) {
    auto& g = probe.scene.gaussians[i];
    for (int k = 0; k < 3; ++k)
      check1("centers", g.center[k], grads.scene.center[i][k]);
    for (int k = 0; k < 4; ++k)
      check1("quaternions", g.rotation[k], grads.scene.rotation[i][k]);
    for (int k = 0; k < 3; ++k)
      check1("log-scales", g.log_scale[k], grads.scene.log_scale[i][k]);
    check1("opacity-logits", g.opacity_logit, grads.scene.opacity_logit[i]);
    for (int k = 0; k < 3; ++k)
      check1("sh-dc", g.sh.coeffs[0][k], grads.scene.sh[i].coeffs[0][k]);
  }
  for (std::size_t v = 1; v < probe.context_poses.size(); ++v)
    for (int k = 0; k < 10; ++k) {
      double& slot = k < 4 ? probe.context_poses[v].trans_h[k]
                           : probe.context_poses[v].rot6[k - 4];
      check1("context-poses", slot, grads.context[v][k]);
    }
  for (std::size_t v = 0; v < probe.target_poses.size(); ++v)
    for (int k = 0; k < 10; ++k) {
      double& slot = k < 4 ? probe.target_poses[v].trans_h[k]
                           : probe.target_poses[v].rot6[k - 4];
      check1("target-poses", slot, grads.target[v][k]);
    }
  return rep;
}

}  // namespace usplat::testutil
