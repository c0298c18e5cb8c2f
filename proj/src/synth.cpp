#include "usplat/harness/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "usplat/core/rng.hpp"
#include "usplat/io/png_io.hpp"
#include "usplat/io/ply.hpp"
#include "usplat/render/forward.hpp"

namespace usplat {

namespace {

Vec3d ring_direction(double yaw, double pitch) {
  // Unit vector from the scene center toward a camera; yaw 0 / pitch 0
  // points back at the reference camera.
  return {std::sin(yaw) * std::cos(pitch), std::sin(pitch),
          -std::cos(yaw) * std::cos(pitch)};
}

/// Camera-to-canonical look-at with +z forward, +x right, +y down.
SE3Pose<double> look_at(const Vec3d& position, const Vec3d& target) {
  const Vec3d forward = (target - position).normalized();
  Vec3d right = Vec3d(0, 1, 0).cross(forward);
  if (right.norm() < 1e-9) right = Vec3d(1, 0, 0);  // looking straight up/down
  right.normalize();
  const Vec3d down = forward.cross(right);
  SE3Pose<double> pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = position;
  return pose;
}

GaussianPrimitive<double> make_splat(const Vec3d& center, const Vec3d& rgb,
                                     double scale, double opacity) {
  GaussianPrimitive<double> g;
  g.center = center;
  g.log_scale = Vec3d::Constant(std::log(scale));
  g.opacity_logit = logit(opacity);
  g.sh = ShVec<double>::constant(rgb);
  return g;
}

Vec3d checker_color(int i, int j) {
  static const Vec3d palette[4] = {{0.85, 0.25, 0.2},
                                   {0.2, 0.55, 0.85},
                                   {0.9, 0.8, 0.25},
                                   {0.25, 0.75, 0.4}};
  return palette[std::size_t(((i & 1) << 1) | (j & 1))];
}

void add_sh_bands(GaussianPrimitive<double>& g, int degree, Rng& rng) {
  if (degree <= 0) return;
  g.sh.count = sh_coeff_count(degree);
  for (int b = 1; b < g.sh.count; ++b)
    g.sh.coeffs[std::size_t(b)] =
        Vec3d(rng.normal(), rng.normal(), rng.normal()) * 0.08;
}

Scene<double> make_gaussian_cloud(const SynthSpec& spec, const Vec3d& center,
                                  double extent, Rng& rng) {
  Scene<double> scene;
  scene.gaussians.reserve(std::size_t(spec.n_splats));
  for (int i = 0; i < spec.n_splats; ++i) {
    const Vec3d offset(rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                       rng.uniform(-extent, extent));
    const Vec3d rgb(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                    rng.uniform(0.1, 0.9));
    auto g = make_splat(center + offset, rgb,
                        extent * rng.uniform(0.05, 0.15),
                        rng.uniform(0.4, 0.9));
    // Anisotropy + orientation so covariance gradients are exercised.
    g.log_scale += Vec3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                         rng.uniform(-0.4, 0.4));
    const Mat3d rot = rng.rotation();
    const double w = std::sqrt(std::max(0.0, 1.0 + rot.trace())) / 2.0;
    if (w > 1e-6) {
      g.rotation = Vec4d(w, (rot(2, 1) - rot(1, 2)) / (4 * w),
                         (rot(0, 2) - rot(2, 0)) / (4 * w),
                         (rot(1, 0) - rot(0, 1)) / (4 * w));
      g.rotation.normalize();
    }
    add_sh_bands(g, spec.sh_degree, rng);
    scene.gaussians.push_back(g);
  }
  return scene;
}

/// Gaussians tiled over a rectangle; `axes` maps grid (u, v) into space.
void add_plane(Scene<double>& scene, const Vec3d& origin, const Vec3d& u_axis,
               const Vec3d& v_axis, int grid, int degree, Rng& rng,
               int color_phase) {
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      const double fu = (i + 0.5) / grid - 0.5;
      const double fv = (j + 0.5) / grid - 0.5;
      const Vec3d pos = origin + fu * u_axis + fv * v_axis;
      const double spacing = u_axis.norm() / grid;
      auto g = make_splat(pos, checker_color(i + color_phase, j),
                          spacing * 0.6, 0.92);
      add_sh_bands(g, degree, rng);
      scene.gaussians.push_back(g);
    }
}

Scene<double> make_textured_planes(const SynthSpec& spec, const Vec3d& center,
                                   double extent, Rng& rng) {
  Scene<double> scene;
  const int grid = std::max(4, int(std::round(std::sqrt(spec.n_splats / 3.0))));
  const double side = 2.0 * extent;
  // Back plane plus two tilted side planes at different depths.
  add_plane(scene, center + Vec3d(0, 0, 0.6 * extent), Vec3d(side, 0, 0),
            Vec3d(0, side, 0), grid, spec.sh_degree, rng, 0);
  add_plane(scene, center + Vec3d(-0.5 * extent, 0, -0.2 * extent),
            Vec3d(0.5 * side, 0, 0.35 * side), Vec3d(0, 0.8 * side, 0), grid,
            spec.sh_degree, rng, 1);
  add_plane(scene, center + Vec3d(0.5 * extent, 0.1 * extent, -0.1 * extent),
            Vec3d(0.45 * side, 0, -0.3 * side), Vec3d(0, 0.7 * side, 0), grid,
            spec.sh_degree, rng, 2);
  return scene;
}

Scene<double> make_box_room(const SynthSpec& spec, const Vec3d& center,
                            double extent, Rng& rng) {
  Scene<double> scene;
  const int grid = std::max(4, int(std::round(std::sqrt(spec.n_splats / 5.0))));
  const double side = 2.0 * extent;
  const Vec3d x(side, 0, 0), y(0, side, 0), z(0, 0, side);
  // Five inner faces; the face toward the cameras stays open.
  add_plane(scene, center + Vec3d(0, 0, extent), x, y, grid, spec.sh_degree,
            rng, 0);  // back
  add_plane(scene, center + Vec3d(-extent, 0, 0), z, y, grid, spec.sh_degree,
            rng, 1);  // left
  add_plane(scene, center + Vec3d(extent, 0, 0), z, y, grid, spec.sh_degree,
            rng, 2);  // right
  add_plane(scene, center + Vec3d(0, -extent, 0), x, z, grid, spec.sh_degree,
            rng, 3);  // top
  add_plane(scene, center + Vec3d(0, extent, 0), x, z, grid, spec.sh_degree,
            rng, 0);  // bottom
  return scene;
}

double visible_fraction(const Scene<double>& scene, const SE3Pose<double>& c2w,
                        const CameraIntrinsics<double>& intr) {
  const SE3Pose<double> w2c = se3_inverse(c2w);
  std::size_t visible = 0;
  for (const auto& g : scene.gaussians) {
    const auto p = try_project(intr, w2c, g.center);
    if (p && p->u >= 0 && p->u < double(intr.width) && p->v >= 0 &&
        p->v < double(intr.height))
      ++visible;
  }
  return scene.size() == 0 ? 0.0 : double(visible) / double(scene.size());
}

}  // namespace

SynthSpec parse_synth_spec(const nlohmann::json& j) {
  SynthSpec spec;
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("kind", spec.kind);
  if (spec.kind != "gaussian-cloud" && spec.kind != "textured-planes" &&
      spec.kind != "box-room")
    throw std::runtime_error("synth spec: unknown kind " + spec.kind);
  get("n_context", spec.n_context);
  get("n_target", spec.n_target);
  get("width", spec.width);
  get("height", spec.height);
  get("fov_deg", spec.fov_deg);
  get("n_splats", spec.n_splats);
  get("sh_degree", spec.sh_degree);
  get("camera_distance", spec.camera_distance);
  get("arc_deg", spec.arc_deg);
  get("pitch_jitter_deg", spec.pitch_jitter_deg);
  get("min_visible_fraction", spec.min_visible_fraction);
  get("max_attempts", spec.max_attempts);
  get("seed", spec.seed);
  if (spec.n_context < 1 || spec.n_target < 0 || spec.width < 1 ||
      spec.height < 1 || spec.sh_degree < 0 || spec.sh_degree > 2)
    throw std::runtime_error("synth spec: invalid geometry settings");
  return spec;
}

SynthResult synthesize(const SynthSpec& spec) {
  Rng rng(spec.seed);
  const int n_views = spec.n_context + spec.n_target;
  const double fov = spec.fov_deg * M_PI / 180.0;
  CameraIntrinsics<double> intr;
  intr.width = spec.width;
  intr.height = spec.height;
  intr.fx = intr.fy = 0.5 * spec.width / std::tan(0.5 * fov);
  intr.cx = 0.5 * spec.width;
  intr.cy = 0.5 * spec.height;

  const Vec3d center(0, 0, spec.camera_distance);
  const double extent = 0.38 * spec.camera_distance;

  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    Scene<double> scene;
    if (spec.kind == "gaussian-cloud")
      scene = make_gaussian_cloud(spec, center, extent, rng);
    else if (spec.kind == "textured-planes")
      scene = make_textured_planes(spec, center, extent, rng);
    else
      scene = make_box_room(spec, center, extent, rng);

    // Reference camera at yaw 0 decodes to the exact identity; the rest
    // spread over the arc with a touch of pitch.
    std::vector<SE3Pose<double>> poses;
    const double arc = spec.arc_deg * M_PI / 180.0;
    for (int v = 0; v < n_views; ++v) {
      double yaw = 0, pitch = 0;
      if (v > 0) {
        yaw = arc * (double(v) / double(n_views - 1) - 0.5) +
              rng.uniform(-0.05, 0.05) * arc;
        pitch = rng.uniform(-1.0, 1.0) * spec.pitch_jitter_deg * M_PI / 180.0;
      }
      const Vec3d pos =
          center + spec.camera_distance * ring_direction(yaw, pitch);
      poses.push_back(v == 0 ? SE3Pose<double>{} : look_at(pos, center));
    }

    bool ok = true;
    for (const auto& pose : poses)
      if (visible_fraction(scene, pose, intr) < spec.min_visible_fraction) {
        ok = false;
        break;
      }
    if (!ok) continue;

    SynthResult result;
    result.scene = std::move(scene);
    result.n_context = spec.n_context;
    result.n_target = spec.n_target;
    result.depth_midpoint = spec.camera_distance;
    for (int v = 0; v < n_views; ++v) {
      CameraView view;
      view.intr = intr;
      view.pose = poses[std::size_t(v)];
      result.views.push_back(view);
    }
    return result;
  }
  throw std::runtime_error("synthesize: no sample met the visibility bound");
}

void write_synth_outputs(const std::string& out_dir, const SynthResult& result,
                         int threads) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/images");
  fs::create_directories(out_dir + "/depth");

  save_ply(out_dir + "/scene.ply", result.scene);
  save_cameras(out_dir + "/cams_gt.json", result.views);
  std::vector<CameraView> blind = result.views;
  for (auto& v : blind) v.pose.reset();
  save_cameras(out_dir + "/cams_intrinsics.json", blind);

  RenderOptions<double> opt;
  opt.threads = threads;
  for (std::size_t v = 0; v < result.views.size(); ++v) {
    const auto& view = result.views[v];
    const auto rr =
        render(result.scene, se3_inverse(*view.pose), view.intr, opt);
    char name[32];
    std::snprintf(name, sizeof name, "view_%03zu.png", v);
    write_png_rgb(out_dir + "/images/" + name, rr.rgb);
    write_png_gray16(out_dir + "/depth/" + name, rr.depth);
  }

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["n_context"] = result.n_context;
  meta["n_target"] = result.n_target;
  meta["depth_midpoint"] = result.depth_midpoint;
  std::ofstream out(out_dir + "/meta.json");
  out << meta.dump(2) << "\n";
}

}  // namespace usplat
