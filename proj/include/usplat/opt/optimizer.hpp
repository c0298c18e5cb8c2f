#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "usplat/core/pose10d.hpp"
#include "usplat/loss/losses.hpp"
#include "usplat/render/backward.hpp"

namespace usplat {

template <typename T>
struct OptimConfig {
  T lr_scene = T(1e-2);
  T lr_pose = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  int max_steps = 500;
  int patience = 60;           // plateau steps before stopping
  T plateau_rel_tol = T(1e-5); // relative improvement that resets patience
  LossConfig<T> loss;
  RenderOptions<T> render;
  bool supervise_poses = false; // add the ground-truth pose residual
  bool optimize_scene = true;
  bool optimize_context_poses = true;
  bool optimize_target_poses = true;
  bool verbose = false;

  template <typename U> OptimConfig<U> cast() const {
    OptimConfig<U> c;
    c.lr_scene = U(lr_scene);
    c.lr_pose = U(lr_pose);
    c.beta1 = U(beta1);
    c.beta2 = U(beta2);
    c.eps = U(eps);
    c.max_steps = max_steps;
    c.patience = patience;
    c.plateau_rel_tol = U(plateau_rel_tol);
    c.loss = loss.template cast<U>();
    c.render = render.template cast<U>();
    c.supervise_poses = supervise_poses;
    c.optimize_scene = optimize_scene;
    c.optimize_context_poses = optimize_context_poses;
    c.optimize_target_poses = optimize_target_poses;
    c.verbose = verbose;
    return c;
  }
};

/// Everything the self-supervised recovery optimizes over, plus the
/// fixed observations.
template <typename T>
struct OptimState {
  Scene<T> scene;            // pixel-aligned, one block per context view
  SceneAlignment alignment;
  std::vector<Pose10D<T>> context_poses;  // [0] stays the identity
  std::vector<Pose10D<T>> target_poses;

  std::vector<SE3Pose<T>> decoded_context() const {
    std::vector<SE3Pose<T>> out;
    out.reserve(context_poses.size());
    out.push_back(SE3Pose<T>{});  // reference view is pinned
    for (std::size_t v = 1; v < context_poses.size(); ++v)
      out.push_back(pose10d_to_se3(context_poses[v]));
    return out;
  }
  std::vector<SE3Pose<T>> decoded_target() const {
    std::vector<SE3Pose<T>> out;
    out.reserve(target_poses.size());
    for (const auto& p : target_poses) out.push_back(pose10d_to_se3(p));
    return out;
  }
};

template <typename T>
struct RecoveryProblem {
  std::vector<Image<T>> context_images;
  std::vector<CameraIntrinsics<T>> context_intr;
  std::vector<Image<T>> target_images;
  std::vector<CameraIntrinsics<T>> target_intr;
  // Only consulted when supervise_poses is on.
  std::vector<SE3Pose<T>> gt_context_poses;
  std::vector<SE3Pose<T>> gt_target_poses;
};

template <typename T>
struct InitOptions {
  std::vector<ArrayXX<T>> context_depths;   // per-view; else default_depth
  std::vector<SE3Pose<T>> init_context_poses;  // view-to-canonical; else identity
  std::vector<SE3Pose<T>> init_target_poses;
  T default_depth = T(2);
  T opacity = T(0.5);
  T scale_factor = T(0.7);  // splat radius relative to the pixel footprint
};

/// Unprojects every context pixel to a gaussian along its own ray, then
/// places it in the canonical frame with the given initial pose guess.
/// Centers move with the guessed poses, so the reprojection residual of
/// the initial state is exactly zero.
template <typename T>
OptimState<T> init_state(const RecoveryProblem<T>& problem,
                         const InitOptions<T>& init = {}) {
  const std::size_t n_ctx = problem.context_images.size();
  if (n_ctx != problem.context_intr.size())
    throw std::invalid_argument("init_state: bad context inputs");
  // One context view pins the gauge but leaves no relative geometry to
  // recover; the problem only makes sense from two views up.
  if (n_ctx < 2)
    throw std::invalid_argument("init_state: need at least two context views");
  if (problem.target_images.size() != problem.target_intr.size())
    throw std::invalid_argument("init_state: bad target inputs");

  std::vector<SE3Pose<T>> ctx_poses(n_ctx);
  if (!init.init_context_poses.empty()) {
    if (init.init_context_poses.size() != n_ctx)
      throw std::invalid_argument("init_state: context pose count mismatch");
    ctx_poses = normalize_to_canonical(init.init_context_poses);
  }

  OptimState<T> state;
  std::vector<PixelAlignedGaussianMap<T>> maps;
  for (std::size_t v = 0; v < n_ctx; ++v) {
    const auto& img = problem.context_images[v];
    const auto& intr = problem.context_intr[v];
    if (img.width() != intr.width || img.height() != intr.height)
      throw std::invalid_argument("init_state: image/intrinsics size mismatch");
    PixelAlignedGaussianMap<T> map;
    map.view_index = int(v);
    map.width = intr.width;
    map.height = intr.height;
    map.prims.resize(std::size_t(intr.width) * intr.height);
    const bool have_depth = v < init.context_depths.size() &&
                            init.context_depths[v].size() > 0;
    for (int py = 0; py < intr.height; ++py)
      for (int px = 0; px < intr.width; ++px) {
        T d = have_depth ? init.context_depths[v](py, px) : init.default_depth;
        if (!(d > T(0)) || !std::isfinite(double(d))) d = init.default_depth;
        auto& g = map.at(px, py);
        const Vec3<T> cam_pt =
            unproject(intr, T(px) + T(0.5), T(py) + T(0.5), d);
        g.center = ctx_poses[v].apply(cam_pt);
        g.log_scale =
            Vec3<T>::Constant(std::log(init.scale_factor * d / intr.fx));
        g.opacity_logit = logit(init.opacity);
        g.sh = ShVec<T>{1, {}};
        g.sh.coeffs[0] = sh_dc_from_rgb(img.at(px, py));
      }
    maps.push_back(std::move(map));
  }
  state.scene = assemble_scene(maps, &state.alignment);

  state.context_poses.assign(n_ctx, Pose10D<T>::identity());
  for (std::size_t v = 1; v < n_ctx; ++v)
    state.context_poses[v] = se3_to_pose10d(ctx_poses[v]);

  const std::size_t n_tgt = problem.target_images.size();
  state.target_poses.assign(n_tgt, Pose10D<T>::identity());
  if (!init.init_target_poses.empty()) {
    if (init.init_target_poses.size() != n_tgt)
      throw std::invalid_argument("init_state: target pose count mismatch");
    // Targets live in the same canonical frame as the contexts.
    const SE3Pose<T> ref_inv =
        init.init_context_poses.empty()
            ? SE3Pose<T>{}
            : se3_inverse(init.init_context_poses.front());
    for (std::size_t t = 0; t < n_tgt; ++t)
      state.target_poses[t] =
          se3_to_pose10d(se3_compose(ref_inv, init.init_target_poses[t]));
  }
  return state;
}

template <typename T>
struct StepRecord {
  int step = 0;
  T total = T(0);
  T render = T(0);
  T reproj = T(0);
  T pose_sup = T(0);
};

template <typename T>
struct OptimResult {
  T final_loss = T(0);
  int steps_run = 0;
  std::string stop_reason;
  std::vector<StepRecord<T>> history;
};

namespace detail {

template <typename T>
void adam_scalar(T& p, T g, T& m, T& v, T lr, T b1, T b2, T eps, T bc1, T bc2) {
  m = b1 * m + (T(1) - b1) * g;
  v = b2 * v + (T(1) - b2) * g * g;
  p -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
}

template <typename T, int N>
void adam_vec(Eigen::Matrix<T, N, 1>& p, const Eigen::Matrix<T, N, 1>& g,
              Eigen::Matrix<T, N, 1>& m, Eigen::Matrix<T, N, 1>& v, T lr, T b1,
              T b2, T eps, T bc1, T bc2) {
  for (int i = 0; i < N; ++i)
    adam_scalar(p[i], g[i], m[i], v[i], lr, b1, b2, eps, bc1, bc2);
}

template <typename T>
void check_finite(const char* block, bool ok) {
  if (!ok)
    throw std::runtime_error(std::string("optimizer: non-finite gradient in ") +
                             block);
}

template <typename T>
bool all_finite(const Vec10<T>& v) {
  return v.allFinite();
}

/// Chains a camera-from-world gradient back to the 10 pose parameters of
/// the view-to-canonical encoding.
template <typename T>
Vec10<T> pose_grad_to_vec10(const Pose10D<T>& pose, const PoseGrad<T>& d_w2c) {
  const SE3Pose<T> c2w = pose10d_to_se3(pose);
  Mat3<T> d_rot = Mat3<T>::Zero();
  Vec3<T> d_trans = Vec3<T>::Zero();
  se3_inverse_backward(c2w, d_w2c.rotation, d_w2c.translation, d_rot, d_trans);
  return pose10d_backward(pose, d_rot, d_trans);
}

}  // namespace detail

/// Gradient accumulators for everything the optimizer can move.
template <typename T>
struct TotalGrads {
  SceneGrad<T> scene;
  std::vector<Vec10<T>> context;  // [0] stays zero (frozen reference)
  std::vector<Vec10<T>> target;

  void resize(const OptimState<T>& state) {
    scene.resize_like(state.scene);
    context.assign(state.context_poses.size(), Vec10<T>::Zero());
    target.assign(state.target_poses.size(), Vec10<T>::Zero());
  }
  void set_zero() {
    scene.set_zero();
    for (auto& v : context) v.setZero();
    for (auto& v : target) v.setZero();
  }
};

/// The full training objective at the current state: photometric terms
/// on targets (and optionally contexts), the reprojection term, and the
/// optional supervised pose residual. Accumulates parameter gradients
/// when `grads` is given; `grads` must already match the state's shape.
/// This is the single code path both the optimizer and the gradient
/// checks evaluate.
template <typename T>
StepRecord<T> evaluate_losses(const OptimState<T>& state,
                              const RecoveryProblem<T>& problem,
                              const OptimConfig<T>& cfg,
                              TotalGrads<T>* grads) {
  const std::size_t n_ctx = state.context_poses.size();
  const std::size_t n_tgt = state.target_poses.size();
  const auto ctx_c2w = state.decoded_context();
  const auto tgt_c2w = state.decoded_target();
  std::vector<SE3Pose<T>> ctx_w2c;
  ctx_w2c.reserve(n_ctx);
  for (const auto& p : ctx_c2w) ctx_w2c.push_back(se3_inverse(p));

  StepRecord<T> rec;

  // Photometric terms on target (and optionally context) views.
  auto photometric = [&](const Image<T>& ref, const CameraIntrinsics<T>& intr,
                         const SE3Pose<T>& c2w, const Pose10D<T>* pose_params,
                         Vec10<T>* d_pose_vec) {
    const SE3Pose<T> w2c = se3_inverse(c2w);
    const RenderResult<T> rr = render(state.scene, w2c, intr, cfg.render);
    if (!grads) return rendering_loss(ref, rr.rgb, cfg.loss);
    Image<T> d_img(intr.width, intr.height);
    const T loss = rendering_loss_backward(ref, rr.rgb, cfg.loss, T(1), d_img);
    PoseGrad<T> pg;
    const ArrayXX<T>* none = nullptr;
    render_backward(state.scene, w2c, intr, d_img, none, none, cfg.render,
                    grads->scene, d_pose_vec ? &pg : nullptr);
    if (d_pose_vec)
      *d_pose_vec += detail::pose_grad_to_vec10(*pose_params, pg);
    return loss;
  };

  for (std::size_t t = 0; t < n_tgt; ++t)
    rec.render += photometric(problem.target_images[t], problem.target_intr[t],
                              tgt_c2w[t], &state.target_poses[t],
                              grads ? &grads->target[t] : nullptr);
  if (cfg.loss.render_context_views) {
    for (std::size_t v = 0; v < n_ctx; ++v)
      rec.render +=
          photometric(problem.context_images[v], problem.context_intr[v],
                      ctx_c2w[v], v > 0 ? &state.context_poses[v] : nullptr,
                      (grads && v > 0) ? &grads->context[v] : nullptr);
  }

  // Pixel-alignment consistency; sole driver of the context poses.
  // Free-form scenes carry no alignment, so there is nothing to hold.
  if (cfg.loss.lambda_reproj != T(0) && !state.alignment.blocks.empty()) {
    std::vector<PoseGrad<T>> pose_grads(n_ctx);
    const T reproj = reprojection_loss(
        state.scene, state.alignment, ctx_w2c, problem.context_intr, cfg.loss,
        cfg.loss.lambda_reproj, grads ? &grads->scene : nullptr,
        grads ? &pose_grads : nullptr);
    rec.reproj = cfg.loss.lambda_reproj * reproj;
    if (grads)
      for (std::size_t v = 1; v < n_ctx; ++v)
        grads->context[v] +=
            detail::pose_grad_to_vec10(state.context_poses[v], pose_grads[v]);
  }

  // Optional supervised pose residual over all non-reference views.
  if (cfg.supervise_poses) {
    std::vector<SE3Pose<T>> pred = ctx_c2w, gt = problem.gt_context_poses;
    pred.insert(pred.end(), tgt_c2w.begin(), tgt_c2w.end());
    gt.insert(gt.end(), problem.gt_target_poses.begin(),
              problem.gt_target_poses.end());
    std::vector<PoseResidualGrad<T>> pg;
    rec.pose_sup = pose_supervision_loss(pred, gt, cfg.loss, T(1),
                                         grads ? &pg : nullptr);
    if (grads)
      for (std::size_t v = 1; v < pred.size(); ++v) {
        const bool is_ctx = v < n_ctx;
        const Pose10D<T>& params =
            is_ctx ? state.context_poses[v] : state.target_poses[v - n_ctx];
        const Vec10<T> g =
            pose10d_backward(params, pg[v].rotation, pg[v].translation);
        (is_ctx ? grads->context[v] : grads->target[v - n_ctx]) += g;
      }
  }

  rec.total = rec.render + rec.reproj + rec.pose_sup;
  return rec;
}

/// Joint photometric + reprojection optimization of the scene and every
/// non-reference pose. Context poses are driven only by the reprojection
/// term (and, optionally, context-view photometric loss); target poses
/// only by their own photometric term.
template <typename T>
OptimResult<T> optimize(OptimState<T>& state, const RecoveryProblem<T>& problem,
                        const OptimConfig<T>& cfg) {
  const std::size_t n_ctx = state.context_poses.size();
  const std::size_t n_tgt = state.target_poses.size();
  if (problem.target_images.size() != n_tgt)
    throw std::invalid_argument("optimize: target count mismatch");
  if (cfg.supervise_poses &&
      (problem.gt_context_poses.size() != n_ctx ||
       problem.gt_target_poses.size() != n_tgt))
    throw std::invalid_argument("optimize: missing ground-truth poses");

  TotalGrads<T> grads;
  grads.resize(state);
  SceneGrad<T> m_scene, v_scene;
  m_scene.resize_like(state.scene);
  v_scene.resize_like(state.scene);
  std::vector<Vec10<T>> m_ctx(n_ctx, Vec10<T>::Zero()), v_ctx = m_ctx;
  std::vector<Vec10<T>> m_tgt(n_tgt, Vec10<T>::Zero()), v_tgt = m_tgt;

  OptimResult<T> result;
  T best = std::numeric_limits<T>::infinity();
  int best_step = 0;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    grads.set_zero();
    StepRecord<T> rec = evaluate_losses(state, problem, cfg, &grads);
    rec.step = step;
    result.history.push_back(rec);
    SceneGrad<T>& d_scene = grads.scene;
    std::vector<Vec10<T>>& d_ctx = grads.context;
    std::vector<Vec10<T>>& d_tgt = grads.target;
    if (cfg.verbose)
      std::fprintf(stderr,
                   "step %4d  total %.6e  render %.6e  reproj %.6e\n", step,
                   double(rec.total), double(rec.render), double(rec.reproj));

    // Gradient hygiene before any parameter moves.
    for (std::size_t i = 0; i < state.scene.size(); ++i) {
      detail::check_finite<T>("centers", d_scene.center[i].allFinite());
      detail::check_finite<T>("rotations", d_scene.rotation[i].allFinite());
      detail::check_finite<T>("log-scales", d_scene.log_scale[i].allFinite());
      detail::check_finite<T>("opacities",
                              std::isfinite(double(d_scene.opacity_logit[i])));
      for (int b = 0; b < d_scene.sh[i].count; ++b)
        detail::check_finite<T>("sh coefficients",
                                d_scene.sh[i].coeffs[std::size_t(b)].allFinite());
    }
    for (std::size_t v = 1; v < n_ctx; ++v)
      detail::check_finite<T>("context pose", d_ctx[v].allFinite());
    for (std::size_t t = 0; t < n_tgt; ++t)
      detail::check_finite<T>("target pose", d_tgt[t].allFinite());

    const T bc1 = T(1) - std::pow(cfg.beta1, T(step));
    const T bc2 = T(1) - std::pow(cfg.beta2, T(step));
    if (cfg.optimize_scene) {
      for (std::size_t i = 0; i < state.scene.size(); ++i) {
        auto& g = state.scene.gaussians[i];
        detail::adam_vec(g.center, d_scene.center[i], m_scene.center[i],
                         v_scene.center[i], cfg.lr_scene, cfg.beta1, cfg.beta2,
                         cfg.eps, bc1, bc2);
        detail::adam_vec(g.rotation, d_scene.rotation[i], m_scene.rotation[i],
                         v_scene.rotation[i], cfg.lr_scene, cfg.beta1,
                         cfg.beta2, cfg.eps, bc1, bc2);
        detail::adam_vec(g.log_scale, d_scene.log_scale[i],
                         m_scene.log_scale[i], v_scene.log_scale[i],
                         cfg.lr_scene, cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2);
        detail::adam_scalar(g.opacity_logit, d_scene.opacity_logit[i],
                            m_scene.opacity_logit[i], v_scene.opacity_logit[i],
                            cfg.lr_scene, cfg.beta1, cfg.beta2, cfg.eps, bc1,
                            bc2);
        for (int b = 0; b < g.sh.count; ++b)
          detail::adam_vec(g.sh.coeffs[std::size_t(b)],
                           d_scene.sh[i].coeffs[std::size_t(b)],
                           m_scene.sh[i].coeffs[std::size_t(b)],
                           v_scene.sh[i].coeffs[std::size_t(b)], cfg.lr_scene,
                           cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2);
        // Stay near the unit sphere so the normalization chain in the
        // backward pass keeps its conditioning.
        g.rotation.normalize();
      }
    }
    auto adam_pose = [&](Pose10D<T>& pose, const Vec10<T>& g, Vec10<T>& m,
                         Vec10<T>& v) {
      Vec10<T> p = pose.as_vector();
      detail::adam_vec(p, g, m, v, cfg.lr_pose, cfg.beta1, cfg.beta2, cfg.eps,
                       bc1, bc2);
      pose = Pose10D<T>::from_vector(p);
    };
    if (cfg.optimize_context_poses)
      for (std::size_t v = 1; v < n_ctx; ++v)
        adam_pose(state.context_poses[v], d_ctx[v], m_ctx[v], v_ctx[v]);
    if (cfg.optimize_target_poses)
      for (std::size_t t = 0; t < n_tgt; ++t)
        adam_pose(state.target_poses[t], d_tgt[t], m_tgt[t], v_tgt[t]);

    result.final_loss = rec.total;
    result.steps_run = step;
    if (rec.total < best * (T(1) - cfg.plateau_rel_tol)) {
      best = rec.total;
      best_step = step;
    } else if (step - best_step >= cfg.patience) {
      result.stop_reason = "plateau";
      return result;
    }
  }
  result.stop_reason = "max-steps";
  return result;
}

/// Single-pose photometric refinement ("pose adjustment"): Adam on the
/// 10 pose parameters only, returning the best iterate seen, so the
/// photometric loss of the result can never exceed the initial one.
template <typename T>
struct EpaResult {
  SE3Pose<T> pose;  // view-to-canonical
  T initial_loss = T(0);
  T final_loss = T(0);
  int steps_run = 0;
};

template <typename T>
EpaResult<T> epa_refine(const Scene<T>& scene, const Image<T>& target,
                        const CameraIntrinsics<T>& intr,
                        const SE3Pose<T>& init_pose, const OptimConfig<T>& cfg,
                        int max_steps = 500, int patience = 20) {
  Pose10D<T> pose = se3_to_pose10d(init_pose);
  Vec10<T> m = Vec10<T>::Zero(), v = Vec10<T>::Zero();

  EpaResult<T> out;
  auto eval = [&](const Pose10D<T>& p, Vec10<T>* grad) {
    const SE3Pose<T> c2w = pose10d_to_se3(p);
    const SE3Pose<T> w2c = se3_inverse(c2w);
    const RenderResult<T> rr = render(scene, w2c, intr, cfg.render);
    if (!grad) return rendering_loss(target, rr.rgb, cfg.loss);
    Image<T> d_img(intr.width, intr.height);
    const T loss = rendering_loss_backward(target, rr.rgb, cfg.loss, T(1), d_img);
    PoseGrad<T> pg;
    SceneGrad<T> unused;
    unused.resize_like(scene);
    const ArrayXX<T>* none = nullptr;
    render_backward(scene, w2c, intr, d_img, none, none, cfg.render,
                    unused, &pg);
    *grad = detail::pose_grad_to_vec10(p, pg);
    return loss;
  };

  Pose10D<T> best_pose = pose;
  T best = eval(pose, nullptr);
  out.initial_loss = best;
  int best_step = 0;
  for (int step = 1; step <= max_steps; ++step) {
    Vec10<T> g;
    const T loss = eval(pose, &g);
    detail::check_finite<T>("pose", g.allFinite());
    if (loss < best) {
      best = loss;
      best_pose = pose;
      best_step = step;
    }
    const T bc1 = T(1) - std::pow(cfg.beta1, T(step));
    const T bc2 = T(1) - std::pow(cfg.beta2, T(step));
    Vec10<T> p = pose.as_vector();
    detail::adam_vec(p, g, m, v, cfg.lr_pose, cfg.beta1, cfg.beta2, cfg.eps,
                     bc1, bc2);
    pose = Pose10D<T>::from_vector(p);
    out.steps_run = step;
    if (step - best_step >= patience) break;
  }
  // The loop never evaluates the final iterate; check it before deciding.
  const T last = eval(pose, nullptr);
  if (last < best) {
    best = last;
    best_pose = pose;
  }
  out.pose = pose10d_to_se3(best_pose);
  out.final_loss = best;
  return out;
}

}  // namespace usplat
