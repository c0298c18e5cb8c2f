#include "usplat/harness/experiment.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "usplat/metrics/metrics.hpp"

namespace usplat {

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

nlohmann::json synth_to_json(const SynthSpec& s) {
  return {{"kind", s.kind},
          {"n_context", s.n_context},
          {"n_target", s.n_target},
          {"width", s.width},
          {"height", s.height},
          {"fov_deg", s.fov_deg},
          {"n_splats", s.n_splats},
          {"sh_degree", s.sh_degree},
          {"camera_distance", s.camera_distance},
          {"arc_deg", s.arc_deg},
          {"pitch_jitter_deg", s.pitch_jitter_deg},
          {"min_visible_fraction", s.min_visible_fraction},
          {"seed", s.seed}};
}

nlohmann::json config_to_json(const ExperimentSetup& setup) {
  const auto& o = setup.run.optim;
  const auto& l = o.loss;
  const auto& r = o.render;
  const auto& i = setup.run.init;
  nlohmann::json j;
  j["synth"] = synth_to_json(setup.synth);
  j["seed"] = setup.run.seed;
  j["perturb"] = {{"rot_deg", setup.perturb.rot_deg},
                  {"trans_frac", setup.perturb.trans_frac}};
  j["optim"] = {{"lr_scene", o.lr_scene},
                {"lr_pose", o.lr_pose},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"eps", o.eps},
                {"max_steps", o.max_steps},
                {"patience", o.patience},
                {"plateau_rel_tol", o.plateau_rel_tol},
                {"supervise_poses", o.supervise_poses},
                {"optimize_scene", o.optimize_scene},
                {"optimize_context_poses", o.optimize_context_poses},
                {"optimize_target_poses", o.optimize_target_poses}};
  j["loss"] = {{"gamma_perceptual", l.gamma_perceptual},
               {"lambda_reproj", l.lambda_reproj},
               {"w_rot", l.w_rot},
               {"w_trans", l.w_trans},
               {"clamp_px", l.clamp_px},
               {"render_context_views", l.render_context_views},
               {"reproj_norm", l.reproj_norm == ReprojNorm::kL2 ? "l2" : "l1"},
               {"reduction", l.reduction == Reduction::kMean ? "mean" : "sum"},
               {"perceptual",
                l.perceptual == Perceptual::kDssim ? "dssim" : "none"}};
  j["render"] = {{"background",
                  {r.background[0], r.background[1], r.background[2]}},
                 {"use_tiles", r.use_tiles}};
  j["init"] = {{"default_depth", i.default_depth},
               {"opacity", i.opacity},
               {"scale_factor", i.scale_factor}};
  j["mode_flags"] = {{"init_at_truth", setup.init_at_truth},
                     {"collapse_demo", setup.collapse_demo},
                     {"run_epa", setup.run_epa},
                     {"compute_reference", setup.compute_reference}};
  return j;
}

nlohmann::json pose_to_json(const SE3Pose<double>& pose) {
  const Mat4d m = pose.matrix();
  nlohmann::json a = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

ViewPoseError pose_error_of(int view, bool is_target,
                            const SE3Pose<double>& est,
                            const SE3Pose<double>& gt) {
  ViewPoseError e;
  e.view = view;
  e.is_target = is_target;
  e.rot_deg = kRadToDeg * rotation_geodesic_error(est.rotation, gt.rotation);
  e.trans_deg =
      kRadToDeg * translation_angle_error(est.translation, gt.translation);
  e.error_deg = std::max(e.rot_deg, e.trans_deg);
  return e;
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0;
  double acc = 0;
  for (double x : xs) acc += x;
  return acc / double(xs.size());
}

}  // namespace

double mean_camera_baseline(const std::vector<CameraView>& views) {
  std::vector<Vec3d> centers;
  for (const auto& v : views)
    if (v.pose) centers.push_back(v.pose->translation);
  if (centers.size() < 2)
    throw std::invalid_argument("mean_camera_baseline: need two posed views");
  double acc = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centers.size(); ++a)
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      acc += (centers[a] - centers[b]).norm();
      ++pairs;
    }
  return acc / double(pairs);
}

SE3Pose<double> perturb_pose(const SE3Pose<double>& pose, double rot_deg,
                             double trans_dist, Rng& rng) {
  SE3Pose<double> out;
  out.rotation = rng.rotation_with_angle(rot_deg / kRadToDeg) * pose.rotation;
  out.translation = pose.translation + trans_dist * rng.unit_vector();
  return out;
}

ExperimentResult run_recovery_experiment(const ExperimentSetup& setup) {
  const auto t_start = std::chrono::steady_clock::now();
  ExperimentResult result;
  nlohmann::json timings;

  // --- Scene + observations -------------------------------------------------
  auto t0 = std::chrono::steady_clock::now();
  const SynthResult synth = synthesize(setup.synth);
  const std::size_t n_ctx = std::size_t(synth.n_context);
  const std::size_t n_tgt = std::size_t(synth.n_target);

  std::vector<SE3Pose<double>> gt_pose;
  gt_pose.reserve(synth.views.size());
  for (const auto& v : synth.views) gt_pose.push_back(*v.pose);

  RenderOptions<double> gt_render = setup.run.optim.render;
  gt_render.threads = setup.threads;
  std::vector<Image<double>> gt_img;
  gt_img.reserve(synth.views.size());
  for (std::size_t v = 0; v < synth.views.size(); ++v)
    gt_img.push_back(render(synth.scene, se3_inverse(gt_pose[v]),
                            synth.views[v].intr, gt_render)
                         .rgb);
  timings["synthesize_s"] = seconds_since(t0);

  // --- Initial state with the true poses hidden -----------------------------
  t0 = std::chrono::steady_clock::now();
  const double baseline = mean_camera_baseline(synth.views);
  Rng rng(setup.run.seed);
  std::vector<SE3Pose<double>> init_ctx(n_ctx), init_tgt(n_tgt);
  for (std::size_t v = 1; v < n_ctx; ++v)
    init_ctx[v] = perturb_pose(gt_pose[v], setup.perturb.rot_deg,
                               setup.perturb.trans_frac * baseline, rng);
  for (std::size_t t = 0; t < n_tgt; ++t)
    init_tgt[t] = perturb_pose(gt_pose[n_ctx + t], setup.perturb.rot_deg,
                               setup.perturb.trans_frac * baseline, rng);

  RecoveryProblem<double> problem;
  for (std::size_t v = 0; v < n_ctx; ++v) {
    problem.context_images.push_back(gt_img[v]);
    problem.context_intr.push_back(synth.views[v].intr);
  }
  for (std::size_t t = 0; t < n_tgt; ++t) {
    problem.target_images.push_back(gt_img[n_ctx + t]);
    problem.target_intr.push_back(synth.views[n_ctx + t].intr);
  }
  problem.gt_context_poses.assign(gt_pose.begin(), gt_pose.begin() + n_ctx);
  problem.gt_target_poses.assign(gt_pose.begin() + n_ctx, gt_pose.end());

  OptimConfig<double> cfg = setup.run.optim;
  cfg.render.threads = setup.threads;
  if (setup.collapse_demo) {
    cfg.loss.lambda_reproj = 0;
    cfg.loss.render_context_views = true;
  }

  OptimState<double>& state = result.state;
  if (setup.init_at_truth) {
    state.scene = synth.scene;
    state.context_poses.assign(n_ctx, Pose10D<double>::identity());
    for (std::size_t v = 1; v < n_ctx; ++v)
      state.context_poses[v] = se3_to_pose10d(gt_pose[v]);
    state.target_poses.resize(n_tgt);
    for (std::size_t t = 0; t < n_tgt; ++t)
      state.target_poses[t] = se3_to_pose10d(gt_pose[n_ctx + t]);
  } else {
    InitOptions<double> init = setup.run.init;
    // Flat-depth prior at the scene's depth midpoint.
    init.default_depth = setup.synth.camera_distance;
    init.init_context_poses = init_ctx;
    init.init_target_poses = init_tgt;
    state = init_state(problem, init);
  }
  timings["init_s"] = seconds_since(t0);

  // --- Joint optimization ---------------------------------------------------
  t0 = std::chrono::steady_clock::now();
  result.optim = optimize(state, problem, cfg);
  timings["optimize_s"] = seconds_since(t0);

  // --- Pose metrics ---------------------------------------------------------
  const auto est_ctx = state.decoded_context();
  const auto est_tgt = state.decoded_target();
  std::vector<double> pooled;
  for (std::size_t v = 1; v < n_ctx; ++v) {
    result.pose_errors.push_back(
        pose_error_of(int(v), false, est_ctx[v], gt_pose[v]));
    pooled.push_back(result.pose_errors.back().error_deg);
  }
  for (std::size_t t = 0; t < n_tgt; ++t) {
    result.pose_errors.push_back(
        pose_error_of(int(n_ctx + t), true, est_tgt[t], gt_pose[n_ctx + t]));
    pooled.push_back(result.pose_errors.back().error_deg);
  }
  result.auc5 = pose_auc(pooled, 5.0);
  result.auc10 = pose_auc(pooled, 10.0);
  result.auc20 = pose_auc(pooled, 20.0);

  // --- Target evaluation: estimated poses, then refined poses ---------------
  t0 = std::chrono::steady_clock::now();
  result.epa_poses.resize(n_tgt);
  for (std::size_t t = 0; t < n_tgt; ++t) {
    const auto& intr = problem.target_intr[t];
    const auto& ref = problem.target_images[t];
    TargetEval ev;
    ev.view = int(n_ctx + t);
    const Image<double> est_rgb =
        render(state.scene, se3_inverse(est_tgt[t]), intr, cfg.render).rgb;
    ev.psnr = psnr(ref, est_rgb);
    ev.ssim = ssim(ref, est_rgb);

    result.epa_poses[t] = est_tgt[t];
    ev.psnr_epa = ev.psnr;
    ev.ssim_epa = ev.ssim;
    if (setup.run_epa) {
      const EpaResult<double> epa =
          epa_refine(state.scene, ref, intr, est_tgt[t], cfg,
                     setup.epa_max_steps, setup.epa_patience);
      result.epa_poses[t] = epa.pose;
      ev.epa_initial_loss = epa.initial_loss;
      ev.epa_final_loss = epa.final_loss;
      const Image<double> epa_rgb =
          render(state.scene, se3_inverse(epa.pose), intr, cfg.render).rgb;
      ev.psnr_epa = psnr(ref, epa_rgb);
      ev.ssim_epa = ssim(ref, epa_rgb);
    }
    const ViewPoseError pe =
        pose_error_of(ev.view, true, result.epa_poses[t], gt_pose[n_ctx + t]);
    ev.epa_rot_deg = pe.rot_deg;
    ev.epa_trans_deg = pe.trans_deg;
    ev.epa_error_deg = pe.error_deg;
    result.targets.push_back(ev);
  }
  timings["evaluate_s"] = seconds_since(t0);

  // --- References -----------------------------------------------------------
  t0 = std::chrono::steady_clock::now();
  {
    std::vector<double> ideal;
    for (std::size_t t = 0; t < n_tgt; ++t) {
      const Image<double> rgb =
          render(synth.scene, se3_inverse(gt_pose[n_ctx + t]),
                 problem.target_intr[t], cfg.render)
              .rgb;
      ideal.push_back(psnr(problem.target_images[t], rgb));
    }
    result.ideal_psnr = mean_of(ideal);
  }
  if (setup.compute_reference && !setup.init_at_truth) {
    // Same representation, same optimizer, but the poses are known and
    // frozen: the attainable ceiling for this scene family.
    InitOptions<double> init = setup.run.init;
    init.default_depth = setup.synth.camera_distance;
    init.init_context_poses.assign(gt_pose.begin(), gt_pose.begin() + n_ctx);
    init.init_target_poses.assign(gt_pose.begin() + n_ctx, gt_pose.end());
    OptimState<double> ref_state = init_state(problem, init);
    OptimConfig<double> ref_cfg = cfg;
    ref_cfg.optimize_context_poses = false;
    ref_cfg.optimize_target_poses = false;
    ref_cfg.supervise_poses = false;
    optimize(ref_state, problem, ref_cfg);
    std::vector<double> ref_psnr;
    const auto ref_tgt = ref_state.decoded_target();
    for (std::size_t t = 0; t < n_tgt; ++t) {
      const Image<double> rgb = render(ref_state.scene,
                                       se3_inverse(ref_tgt[t]),
                                       problem.target_intr[t], cfg.render)
                                    .rgb;
      ref_psnr.push_back(psnr(problem.target_images[t], rgb));
    }
    result.reference_psnr = mean_of(ref_psnr);
  }
  timings["reference_s"] = seconds_since(t0);

  // --- Report ---------------------------------------------------------------
  nlohmann::json rep;
  rep["format_version"] = 1;
  rep["mode"] = setup.collapse_demo ? "demonstration" : "experiment";
  rep["config"] = config_to_json(setup);
  rep["optim"] = {{"steps_run", result.optim.steps_run},
                  {"stop_reason", result.optim.stop_reason},
                  {"final_loss", result.optim.final_loss}};
  rep["loss_trace"] = nlohmann::json::array();
  for (const auto& s : result.optim.history)
    rep["loss_trace"].push_back({{"step", s.step},
                                 {"total", s.total},
                                 {"render", s.render},
                                 {"reproj", s.reproj},
                                 {"pose_sup", s.pose_sup}});
  rep["poses"] = nlohmann::json::object();
  rep["poses"]["per_view"] = nlohmann::json::array();
  for (const auto& e : result.pose_errors)
    rep["poses"]["per_view"].push_back({{"view", e.view},
                                        {"role", e.is_target ? "target"
                                                             : "context"},
                                        {"rot_deg", e.rot_deg},
                                        {"trans_deg", e.trans_deg},
                                        {"error_deg", e.error_deg}});
  rep["poses"]["auc"] = {{"at_5deg", result.auc5},
                         {"at_10deg", result.auc10},
                         {"at_20deg", result.auc20}};
  rep["poses"]["estimated"] = nlohmann::json::array();
  for (std::size_t v = 0; v < n_ctx; ++v)
    rep["poses"]["estimated"].push_back(pose_to_json(est_ctx[v]));
  for (std::size_t t = 0; t < n_tgt; ++t)
    rep["poses"]["estimated"].push_back(pose_to_json(est_tgt[t]));
  rep["targets"] = nlohmann::json::array();
  std::vector<double> ps, ps_epa;
  for (const auto& ev : result.targets) {
    rep["targets"].push_back({{"view", ev.view},
                              {"psnr", ev.psnr},
                              {"ssim", ev.ssim},
                              {"psnr_epa", ev.psnr_epa},
                              {"ssim_epa", ev.ssim_epa},
                              {"epa_rot_deg", ev.epa_rot_deg},
                              {"epa_trans_deg", ev.epa_trans_deg},
                              {"epa_error_deg", ev.epa_error_deg},
                              {"epa_initial_loss", ev.epa_initial_loss},
                              {"epa_final_loss", ev.epa_final_loss}});
    ps.push_back(ev.psnr);
    ps_epa.push_back(ev.psnr_epa);
  }
  rep["summary"] = {{"mean_psnr", mean_of(ps)},
                    {"mean_psnr_epa", mean_of(ps_epa)},
                    {"reference_psnr", result.reference_psnr},
                    {"ideal_psnr", result.ideal_psnr}};
  timings["total_s"] = seconds_since(t_start);
  rep["timings"] = timings;
  result.report = std::move(rep);
  return result;
}

std::vector<nlohmann::json> run_experiments(
    const std::vector<ExperimentSetup>& setups, int jobs) {
  std::vector<nlohmann::json> reports(setups.size());
  if (jobs < 1) jobs = 1;
  const std::size_t workers =
      std::min<std::size_t>(std::size_t(jobs), setups.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < setups.size(); ++i)
      reports[i] = run_recovery_experiment(setups[i]).report;
    return reports;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < setups.size(); i += workers)
        reports[i] = run_recovery_experiment(setups[i]).report;
    });
  for (auto& th : pool) th.join();
  return reports;
}

nlohmann::json report_without_timings(nlohmann::json report) {
  report.erase("timings");
  return report;
}

}  // namespace usplat
