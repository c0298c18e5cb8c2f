// Command-line front end: synthetic scene generation, rendering,
// self-supervised recovery, pose estimation and refinement, evaluation.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "usplat/harness/experiment.hpp"
#include "usplat/io/config.hpp"
#include "usplat/io/toml_lite.hpp"
#include "usplat/io/ply.hpp"
#include "usplat/io/png_io.hpp"
#include "usplat/metrics/metrics.hpp"
#include "usplat/solve/pnp.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace usplat;

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string precision = "f64";
  bool verbose = false;
  int jobs = 1;
};

std::string view_name(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu.png", v);
  return buf;
}

void dump_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return json::parse(in);
}

json pose_file_json(int view, const CameraIntrinsics<double>& intr,
                    const SE3Pose<double>& pose_v_to_canonical) {
  json j;
  j["format_version"] = 1;
  j["view"] = view;
  j["K"] = {intr.fx, intr.fy, intr.cx, intr.cy};
  j["size"] = {intr.width, intr.height};
  const Mat4d m = pose_v_to_canonical.matrix();
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  j["pose_v_to_canonical"] = std::move(a);
  return j;
}

struct PoseFile {
  int view = 0;
  CameraIntrinsics<double> intr;
  SE3Pose<double> pose;  // view-to-canonical
};

PoseFile load_pose_file(const std::string& path) {
  const json j = read_json(path);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error(path + ": unsupported format_version");
  PoseFile pf;
  pf.view = j.value("view", 0);
  const auto k = j.at("K");
  const auto sz = j.at("size");
  pf.intr = {k.at(0).get<double>(), k.at(1).get<double>(),
             k.at(2).get<double>(), k.at(3).get<double>(),
             sz.at(0).get<int>(), sz.at(1).get<int>()};
  const auto p = j.at("pose_v_to_canonical");
  if (p.size() != 16)
    throw std::runtime_error(path + ": pose must have 16 entries");
  Mat4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = p.at(std::size_t(4 * r + c)).get<double>();
  pf.pose = SE3Pose<double>::from_matrix(m);
  if (!pf.pose.is_valid(1e-6))
    throw std::runtime_error(path + ": pose is not a rigid transform");
  return pf;
}

// ---------------------------------------------------------------------------

void cmd_synth(const GlobalOpts& g, const std::string& spec_path,
               const std::string& out_dir) {
  SynthSpec spec = parse_synth_spec(load_config_file(spec_path));
  if (g.seed) spec.seed = *g.seed;
  const SynthResult result = synthesize(spec);
  write_synth_outputs(out_dir, result, g.threads);
  if (g.verbose)
    std::fprintf(stderr, "synth: %zu gaussians, %zu views -> %s\n",
                 result.scene.size(), result.views.size(), out_dir.c_str());
}

template <typename T>
void render_views(const Scene<double>& scene_d,
                  const std::vector<CameraView>& views,
                  const std::string& out_dir, const GlobalOpts& g) {
  const Scene<T> scene = scene_d.template cast<T>();
  RenderOptions<T> opt;
  opt.threads = g.threads;
  fs::create_directories(out_dir + "/images");
  fs::create_directories(out_dir + "/depth");
  const auto poses = poses_of(views);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto rr = render(scene, se3_inverse(poses[v].cast<T>()),
                           views[v].intr.cast<T>(), opt);
    write_png_rgb(out_dir + "/images/" + view_name(v),
                  rr.rgb.template cast<double>());
    write_png_gray16(out_dir + "/depth/" + view_name(v),
                     rr.depth.template cast<double>());
  }
}

void cmd_render(const GlobalOpts& g, const std::string& scene_path,
                const std::string& cams_path, const std::string& out_dir) {
  const Scene<double> scene = load_ply(scene_path);
  const auto views = load_cameras(cams_path);
  if (g.precision == "f32")
    render_views<float>(scene, views, out_dir, g);
  else
    render_views<double>(scene, views, out_dir, g);
  if (g.verbose)
    std::fprintf(stderr, "render: %zu views -> %s\n", views.size(),
                 out_dir.c_str());
}

template <typename T>
void recover_run(const GlobalOpts& g, const RunConfig& rc,
                 const std::vector<Image<double>>& images,
                 const std::vector<CameraView>& cams, int n_ctx, int n_tgt,
                 double d0, const std::vector<SE3Pose<double>>& init_poses,
                 const std::string& out_dir) {
  RecoveryProblem<T> problem;
  for (int v = 0; v < n_ctx; ++v) {
    problem.context_images.push_back(images[std::size_t(v)].cast<T>());
    problem.context_intr.push_back(cams[std::size_t(v)].intr.cast<T>());
  }
  for (int t = 0; t < n_tgt; ++t) {
    problem.target_images.push_back(images[std::size_t(n_ctx + t)].cast<T>());
    problem.target_intr.push_back(cams[std::size_t(n_ctx + t)].intr.cast<T>());
  }

  InitOptions<T> init;
  init.default_depth = T(d0);
  init.opacity = T(rc.init.opacity);
  init.scale_factor = T(rc.init.scale_factor);
  if (!init_poses.empty()) {
    for (int v = 0; v < n_ctx; ++v)
      init.init_context_poses.push_back(init_poses[std::size_t(v)].cast<T>());
    for (int t = 0; t < n_tgt; ++t)
      init.init_target_poses.push_back(
          init_poses[std::size_t(n_ctx + t)].cast<T>());
  }

  OptimConfig<T> cfg = rc.optim.template cast<T>();
  cfg.render.threads = g.threads;
  cfg.verbose = cfg.verbose || g.verbose;

  OptimState<T> state = init_state(problem, init);
  const auto t0 = std::chrono::steady_clock::now();
  const OptimResult<T> opt = optimize(state, problem, cfg);
  const double optimize_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/renders");

  // Scene + alignment (with per-view intrinsics so pose tools are
  // self-contained), estimated cameras, per-view renders.
  const Scene<double> scene_d = state.scene.template cast<double>();
  SceneAlignment alignment = state.alignment;
  for (auto& b : alignment.blocks) {
    const auto& intr = cams[std::size_t(b.view_index)].intr;
    b.intrinsics = {{intr.fx, intr.fy, intr.cx, intr.cy}};
  }
  save_scene(out_dir + "/scene.ply", scene_d, &alignment);

  const auto ctx_poses = state.decoded_context();
  const auto tgt_poses = state.decoded_target();
  std::vector<SE3Pose<double>> all_poses;
  for (const auto& p : ctx_poses) all_poses.push_back(p.template cast<double>());
  for (const auto& p : tgt_poses) all_poses.push_back(p.template cast<double>());
  std::vector<CameraView> est = cams;
  for (std::size_t v = 0; v < est.size(); ++v) est[v].pose = all_poses[v];
  save_cameras(out_dir + "/cams_est.json", est);

  json fit = json::array();
  for (std::size_t v = 0; v < est.size(); ++v) {
    const auto rr = render(state.scene, se3_inverse(all_poses[v].cast<T>()),
                           cams[v].intr.cast<T>(), cfg.render);
    const Image<double> rgb = rr.rgb.template cast<double>();
    write_png_rgb(out_dir + "/renders/" + view_name(v), rgb);
    fit.push_back({{"view", v},
                   {"role", int(v) < n_ctx ? "context" : "target"},
                   {"psnr", psnr(images[v], rgb)},
                   {"ssim", ssim(images[v], rgb)}});
  }

  json rep;
  rep["format_version"] = 1;
  rep["precision"] = g.precision;
  rep["seed"] = rc.seed;
  rep["optim"] = {{"steps_run", opt.steps_run},
                  {"stop_reason", opt.stop_reason},
                  {"final_loss", double(opt.final_loss)}};
  rep["loss_trace"] = json::array();
  for (const auto& s : opt.history)
    rep["loss_trace"].push_back({{"step", s.step},
                                 {"total", double(s.total)},
                                 {"render", double(s.render)},
                                 {"reproj", double(s.reproj)},
                                 {"pose_sup", double(s.pose_sup)}});
  rep["fit"] = std::move(fit);
  rep["timings"] = {{"optimize_s", optimize_s}};
  dump_json(out_dir + "/report.json", rep);
}

void cmd_recover(const GlobalOpts& g, const std::string& images_dir,
                 const std::string& cams_path, const std::string& config_path,
                 const std::string& out_dir, const std::string& init_cams) {
  const json meta = read_json(images_dir + "/meta.json");
  const int n_ctx = meta.at("n_context").get<int>();
  const int n_tgt = meta.at("n_target").get<int>();
  if (n_ctx < 2 || n_tgt < 1)
    throw std::runtime_error("recover: need >= 2 context and >= 1 target view");

  const auto cams = load_cameras(cams_path);
  require_no_poses(cams, "recover");
  if (int(cams.size()) != n_ctx + n_tgt)
    throw std::runtime_error("recover: camera count does not match meta.json");

  std::vector<Image<double>> images;
  for (int v = 0; v < n_ctx + n_tgt; ++v)
    images.push_back(
        read_png_rgb(images_dir + "/images/" + view_name(std::size_t(v))));
  for (int v = 0; v < n_ctx + n_tgt; ++v)
    if (images[std::size_t(v)].width() != cams[std::size_t(v)].intr.width ||
        images[std::size_t(v)].height() != cams[std::size_t(v)].intr.height)
      throw std::runtime_error("recover: image/intrinsics size mismatch");

  RunConfig rc = load_run_config(config_path);
  if (g.seed) rc.seed = *g.seed;
  const double d0 = meta.value("depth_midpoint", rc.init.default_depth);

  std::vector<SE3Pose<double>> init_poses;
  if (!init_cams.empty()) {
    const auto iv = load_cameras(init_cams);
    if (int(iv.size()) != n_ctx + n_tgt)
      throw std::runtime_error("recover: init camera count mismatch");
    init_poses = poses_of(iv);
  }

  if (g.precision == "f32")
    recover_run<float>(g, rc, images, cams, n_ctx, n_tgt, d0, init_poses,
                       out_dir);
  else
    recover_run<double>(g, rc, images, cams, n_ctx, n_tgt, d0, init_poses,
                        out_dir);
  if (g.verbose) std::fprintf(stderr, "recover: wrote %s\n", out_dir.c_str());
}

void cmd_estimate_pose(const GlobalOpts& g, const std::string& scene_path,
                       int view, const std::string& out_path) {
  std::optional<SceneAlignment> alignment;
  const Scene<double> scene = load_scene(scene_path, &alignment);
  if (!alignment)
    throw std::runtime_error("estimate-pose: scene has no alignment sidecar");
  const SceneAlignment::ViewBlock* block = nullptr;
  for (const auto& b : alignment->blocks)
    if (b.view_index == view) block = &b;
  if (!block)
    throw std::runtime_error("estimate-pose: view not in alignment sidecar");
  if (!block->intrinsics)
    throw std::runtime_error(
        "estimate-pose: sidecar lacks intrinsics for this view");

  const auto& k = *block->intrinsics;
  const CameraIntrinsics<double> intr{k[0], k[1], k[2], k[3], block->width,
                                      block->height};
  std::vector<Vec3d> points;
  std::vector<Vec2d> pixels;
  points.reserve(std::size_t(block->width) * block->height);
  for (int py = 0; py < block->height; ++py)
    for (int px = 0; px < block->width; ++px) {
      const std::size_t gi =
          block->offset + std::size_t(py) * block->width + px;
      points.push_back(scene.gaussians[gi].center);
      pixels.push_back({double(px) + 0.5, double(py) + 0.5});
    }

  PnPOptions opt;
  opt.seed = g.seed.value_or(0);
  const PnPResult res = solve_pnp(points, pixels, intr, opt);
  if (res.status != PnPStatus::kOk)
    throw std::runtime_error("estimate-pose: no consensus pose");

  json j = pose_file_json(view, intr, se3_inverse(res.cam_from_world));
  j["inlier_count"] = res.inliers.size();
  j["rms_px"] = res.rms_px;
  dump_json(out_path, j);
  if (g.verbose)
    std::fprintf(stderr, "estimate-pose: %zu/%zu inliers, rms %.4f px\n",
                 res.inliers.size(), points.size(), res.rms_px);
}

template <typename T>
void epa_run(const GlobalOpts& g, const RunConfig& rc,
             const Scene<double>& scene_d, const Image<double>& target,
             const PoseFile& init, const std::string& out_path) {
  OptimConfig<T> cfg = rc.optim.template cast<T>();
  cfg.render.threads = g.threads;
  const Scene<T> scene = scene_d.template cast<T>();
  const EpaResult<T> res =
      epa_refine(scene, target.cast<T>(), init.intr.cast<T>(),
                 init.pose.cast<T>(), cfg);
  json j = pose_file_json(init.view, init.intr,
                          res.pose.template cast<double>());
  j["initial_loss"] = double(res.initial_loss);
  j["final_loss"] = double(res.final_loss);
  j["steps_run"] = res.steps_run;
  dump_json(out_path, j);
  if (g.verbose)
    std::fprintf(stderr, "epa: loss %.6e -> %.6e in %d steps\n",
                 double(res.initial_loss), double(res.final_loss),
                 res.steps_run);
}

void cmd_epa(const GlobalOpts& g, const std::string& scene_path,
             const std::string& target_path, const std::string& init_path,
             const std::string& out_path, const std::string& config_path) {
  const Scene<double> scene = load_ply(scene_path);
  const Image<double> target = read_png_rgb(target_path);
  const PoseFile init = load_pose_file(init_path);
  if (target.width() != init.intr.width || target.height() != init.intr.height)
    throw std::runtime_error("epa: target image size does not match pose file");
  RunConfig rc;
  if (!config_path.empty()) rc = load_run_config(config_path);
  if (g.precision == "f32")
    epa_run<float>(g, rc, scene, target, init, out_path);
  else
    epa_run<double>(g, rc, scene, target, init, out_path);
}

void cmd_eval(const GlobalOpts& g, const std::string& pred_dir,
              const std::string& gt_dir, const std::string& out_path) {
  const auto gt_views = load_cameras(gt_dir + "/cams_gt.json");
  const auto pred_views = load_cameras(pred_dir + "/cams_est.json");
  if (gt_views.size() != pred_views.size())
    throw std::runtime_error("eval: view count mismatch");
  const auto gt_poses = normalize_to_canonical(poses_of(gt_views));
  const auto pred_poses = normalize_to_canonical(poses_of(pred_views));

  constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;
  json per_view = json::array();
  std::vector<double> errors;
  for (std::size_t v = 1; v < gt_views.size(); ++v) {
    const double rot = kRadToDeg * rotation_geodesic_error(
                                       pred_poses[v].rotation,
                                       gt_poses[v].rotation);
    const double trans = kRadToDeg * translation_angle_error(
                                         pred_poses[v].translation,
                                         gt_poses[v].translation);
    errors.push_back(std::max(rot, trans));
    per_view.push_back({{"view", v},
                        {"rot_deg", rot},
                        {"trans_deg", trans},
                        {"error_deg", errors.back()}});
  }

  int n_ctx = 0;
  if (fs::exists(gt_dir + "/meta.json"))
    n_ctx = read_json(gt_dir + "/meta.json").value("n_context", 0);

  json images = json::array();
  double target_psnr_acc = 0;
  int target_count = 0;
  for (std::size_t v = 0; v < gt_views.size(); ++v) {
    const std::string gt_png = gt_dir + "/images/" + view_name(v);
    const std::string pred_png = pred_dir + "/renders/" + view_name(v);
    if (!fs::exists(gt_png) || !fs::exists(pred_png)) continue;
    const Image<double> a = read_png_rgb(gt_png);
    const Image<double> b = read_png_rgb(pred_png);
    const double p = psnr(a, b), s = ssim(a, b);
    const bool is_target = n_ctx > 0 && int(v) >= n_ctx;
    images.push_back({{"view", v},
                      {"role", is_target ? "target" : "context"},
                      {"psnr", p},
                      {"ssim", s}});
    if (is_target) {
      target_psnr_acc += p;
      ++target_count;
    }
  }

  json rep;
  rep["format_version"] = 1;
  rep["poses"] = {{"per_view", per_view},
                  {"auc",
                   {{"at_5deg", pose_auc(errors, 5.0)},
                    {"at_10deg", pose_auc(errors, 10.0)},
                    {"at_20deg", pose_auc(errors, 20.0)}}}};
  rep["images"] = std::move(images);
  if (target_count > 0)
    rep["summary"] = {{"mean_target_psnr", target_psnr_acc / target_count}};
  dump_json(out_path, rep);
  if (g.verbose) std::fprintf(stderr, "eval: wrote %s\n", out_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixel-aligned gaussian splatting: synthesis, recovery, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  std::uint64_t seed_value = 0;
  auto* seed_opt =
      app.add_option("--seed", seed_value, "override every configured seed");
  app.add_option("--threads", g.threads, "renderer worker threads")
      ->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "floating-point width")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--verbose", g.verbose, "progress on stderr");
  app.add_option("--jobs", g.jobs,
                 "workers for multi-seed experiment fan-out (library drivers)")
      ->check(CLI::PositiveNumber);

  std::string spec_path, out_path, scene_path, cams_path, images_dir;
  std::string config_path, target_path, init_path, pred_dir, gt_dir;
  std::string init_cams;
  int view = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  synth->add_option("--spec", spec_path, "scene spec (.toml/.json)")->required();
  synth->add_option("--out", out_path, "output directory")->required();

  auto* render_cmd = app.add_subcommand("render", "render a scene at given cameras");
  render_cmd->add_option("--scene", scene_path, "gaussian .ply")->required();
  render_cmd->add_option("--cams", cams_path, "cameras with poses")->required();
  render_cmd->add_option("--out", out_path, "output directory")->required();

  auto* recover = app.add_subcommand(
      "recover", "joint scene + pose recovery from unposed images");
  recover->add_option("--images", images_dir, "synth output directory")
      ->required();
  recover->add_option("--cams-intrinsics", cams_path, "intrinsics-only cameras")
      ->required();
  recover->add_option("--config", config_path, "run config (.toml/.json)")
      ->required();
  recover->add_option("--out", out_path, "output directory")->required();
  recover->add_option("--init-cams", init_cams,
                      "optional posed cameras used as the initial guess");

  auto* est = app.add_subcommand("estimate-pose",
                                 "PnP pose of a context view from its block");
  est->add_option("--scene", scene_path, "gaussian .ply with sidecar")
      ->required();
  est->add_option("--view", view, "context view index")->required();
  est->add_option("--out", out_path, "pose .json")->required();

  auto* epa = app.add_subcommand("epa", "photometric pose refinement");
  epa->add_option("--scene", scene_path, "gaussian .ply")->required();
  epa->add_option("--target", target_path, "target image .png")->required();
  epa->add_option("--init", init_path, "initial pose .json")->required();
  epa->add_option("--out", out_path, "refined pose .json")->required();
  epa->add_option("--config", config_path, "run config (.toml/.json)");

  auto* eval_cmd = app.add_subcommand("eval", "compare a recovery to ground truth");
  eval_cmd->add_option("--pred", pred_dir, "recovery output directory")
      ->required();
  eval_cmd->add_option("--gt", gt_dir, "synth output directory")->required();
  eval_cmd->add_option("--out", out_path, "report .json")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (synth->parsed()) cmd_synth(g, spec_path, out_path);
    if (render_cmd->parsed()) cmd_render(g, scene_path, cams_path, out_path);
    if (recover->parsed())
      cmd_recover(g, images_dir, cams_path, config_path, out_path, init_cams);
    if (est->parsed()) cmd_estimate_pose(g, scene_path, view, out_path);
    if (epa->parsed())
      cmd_epa(g, scene_path, target_path, init_path, out_path, config_path);
    if (eval_cmd->parsed()) cmd_eval(g, pred_dir, gt_dir, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
