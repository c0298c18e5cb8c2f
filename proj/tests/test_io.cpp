#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "usplat/io/camera_json.hpp"
#include "usplat/io/config.hpp"
#include "usplat/io/ply.hpp"
#include "usplat/io/png_io.hpp"
#include "usplat/io/toml_lite.hpp"

using namespace usplat;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Scene<double> random_scene(Rng& rng, int n, int sh_count) {
  Scene<double> scene;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive<double> g;
    g.center = rng.normal3();
    Vec4<double> q;
    for (int k = 0; k < 4; ++k) q[k] = rng.normal();
    g.rotation = q.normalized();
    g.log_scale = rng.normal3() * 0.4;
    g.opacity_logit = rng.normal();
    g.sh = ShVec<double>{sh_count, {}};
    for (int c = 0; c < sh_count; ++c) g.sh.coeffs[std::size_t(c)] = rng.normal3();
    scene.gaussians.push_back(g);
  }
  return scene;
}

}  // namespace

TEST_CASE("splat archive round trip is bitwise stable") {
  Rng rng(101);
  const auto scene = random_scene(rng, 23, 9);
  const auto p1 = temp_path("io_scene_a.ply");
  const auto p2 = temp_path("io_scene_b.ply");
  save_ply(p1, scene);
  const auto back = load_ply(p1);
  REQUIRE(back.size() == scene.size());
  // Storage is float32, so a second export must reproduce the file
  // byte for byte even though doubles were truncated on the way in.
  save_ply(p2, back);
  CHECK(slurp(p1) == slurp(p2));
  // And the truncation itself is within float precision.
  for (std::size_t i = 0; i < scene.size(); ++i) {
    CHECK((back.gaussians[i].center - scene.gaussians[i].center).norm() < 1e-6);
    CHECK(back.gaussians[i].sh.count == 9);
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("alignment sidecar carries blocks and per-view intrinsics") {
  Rng rng(102);
  const auto scene = random_scene(rng, 12, 1);
  SceneAlignment alignment;
  alignment.blocks = {SceneAlignment::ViewBlock{0, 4, 2, 0},
                      SceneAlignment::ViewBlock{1, 2, 2, 8}};
  alignment.blocks[1].intrinsics = {{60.0, 61.0, 16.0, 15.5}};

  const auto path = temp_path("io_scene_c.ply");
  save_scene(path, scene, &alignment);
  CHECK(std::filesystem::exists(alignment_sidecar_path(path)));

  std::optional<SceneAlignment> got;
  const auto back = load_scene(path, &got);
  CHECK(back.size() == 12);
  REQUIRE(got.has_value());
  REQUIRE(got->blocks.size() == 2);
  CHECK(got->blocks[0].view_index == 0);
  CHECK(got->blocks[0].width == 4);
  CHECK(got->blocks[1].offset == 8);
  CHECK_FALSE(got->blocks[0].intrinsics.has_value());
  REQUIRE(got->blocks[1].intrinsics.has_value());
  CHECK((*got->blocks[1].intrinsics)[1] == 61.0);

  std::remove(path.c_str());
  std::remove(alignment_sidecar_path(path).c_str());
}

TEST_CASE("scene without sidecar loads with empty alignment") {
  Rng rng(103);
  const auto scene = random_scene(rng, 5, 1);
  const auto path = temp_path("io_scene_d.ply");
  save_ply(path, scene);
  std::optional<SceneAlignment> got;
  load_scene(path, &got);
  CHECK_FALSE(got.has_value());
  std::remove(path.c_str());
}

TEST_CASE("rgb png round trips the 8-bit lattice exactly") {
  Image<double> img = Image<double>::zeros(16, 8);
  Rng rng(104);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x)
      img.set(x, y, Vec3<double>(double(rng.index(256)) / 255.0,
                                 double(rng.index(256)) / 255.0,
                                 double(rng.index(256)) / 255.0));
  const auto path = temp_path("io_rgb.png");
  write_png_rgb(path, img);
  const auto back = read_png_rgb(path);
  REQUIRE(back.width() == 16);
  REQUIRE(back.height() == 8);
  CHECK(image_max_abs_diff(img, back) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("rgb png clamps out-of-range values on write") {
  Image<double> img = Image<double>::zeros(4, 2);
  img.set(0, 0, Vec3<double>(-0.5, 1.7, 0.5));
  const auto path = temp_path("io_rgb_clamp.png");
  write_png_rgb(path, img);
  const auto back = read_png_rgb(path);
  CHECK(back.at(0, 0).x() == 0.0);
  CHECK(back.at(0, 0).y() == 1.0);
  std::remove(path.c_str());
}

TEST_CASE("16-bit depth png resolves millimeters") {
  ArrayXX<double> depth(5, 7);
  Rng rng(105);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) depth(r, c) = double(rng.index(60000)) / 1000.0;
  const auto path = temp_path("io_depth.png");
  write_png_gray16(path, depth);
  const auto back = read_png_gray16(path);
  REQUIRE(back.rows() == 5);
  REQUIRE(back.cols() == 7);
  CHECK((depth - back).abs().maxCoeff() == 0.0);
  // Arbitrary values land on the nearest lattice point.
  depth(0, 0) = 1.23456;
  write_png_gray16(path, depth);
  CHECK(std::abs(read_png_gray16(path)(0, 0) - 1.23456) <= 5e-4);
  std::remove(path.c_str());
}

TEST_CASE("camera json round trips poses and sizes") {
  Rng rng(106);
  std::vector<CameraView> views(3);
  for (std::size_t v = 0; v < 3; ++v) {
    views[v].intr = {80.0 + double(v), 81.0, 32.0, 24.5, 64, 48};
    if (v > 0) {
      SE3Pose<double> p;
      p.rotation = rng.rotation();
      p.translation = rng.normal3();
      views[v].pose = p;
    }
  }
  const auto path = temp_path("io_cams.json");
  save_cameras(path, views);
  const auto back = load_cameras(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0].intr.fx == 80.0);
  CHECK(back[2].intr.width == 64);
  CHECK_FALSE(back[0].pose.has_value());
  REQUIRE(back[1].pose.has_value());
  CHECK((back[1].pose->rotation - views[1].pose->rotation).norm() < 1e-12);
  CHECK((back[1].pose->translation - views[1].pose->translation).norm() < 1e-12);

  CHECK_THROWS_AS(require_no_poses(back, "test"), std::runtime_error);
  CHECK_THROWS_AS(poses_of(back), std::runtime_error);  // view 0 lacks one
  auto stripped = back;
  for (auto& v : stripped) v.pose.reset();
  CHECK_NOTHROW(require_no_poses(stripped, "test"));
  CHECK(intrinsics_of(back).size() == 3);
  std::remove(path.c_str());
}

TEST_CASE("camera json rejects malformed input") {
  const auto path = temp_path("io_cams_bad.json");
  {
    std::ofstream out(path);
    out << R"({"format_version": 1, "views": [{"K": [1, 2, 3], "size": [4, 4]}]})";
  }
  CHECK_THROWS(load_cameras(path));
  std::remove(path.c_str());
}

TEST_CASE("toml subset covers tables, scalars, strings, and booleans") {
  const auto j = parse_toml_lite(
      "# comment\n"
      "top = 3\n"
      "[optim]\n"
      "lr_scene = 0.01  # trailing comment\n"
      "max_steps = 120\n"
      "verbose = true\n"
      "name = \"run-a\"\n"
      "\n"
      "[loss]\n"
      "gamma_perceptual = 0.0\n");
  CHECK(j.at("top").get<int>() == 3);
  CHECK(j.at("optim").at("lr_scene").get<double>() == 0.01);
  CHECK(j.at("optim").at("max_steps").get<int>() == 120);
  CHECK(j.at("optim").at("verbose").get<bool>() == true);
  CHECK(j.at("optim").at("name").get<std::string>() == "run-a");
  CHECK(j.at("loss").at("gamma_perceptual").get<double>() == 0.0);
}

TEST_CASE("toml subset reports the offending line") {
  try {
    parse_toml_lite("a = 1\nb ~ 2\n");
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("run config accepts known keys and rejects unknown ones") {
  nlohmann::json j;
  j["seed"] = 7;
  j["optim"] = {{"lr_scene", 0.02}, {"max_steps", 44}, {"patience", 9}};
  j["loss"] = {{"gamma_perceptual", 0.1},
               {"lambda_reproj", 0.0},
               {"reproj_norm", "l1"},
               {"reduction", "sum"}};
  j["render"] = {{"background", {0.1, 0.2, 0.3}}, {"use_tiles", false}};
  j["init"] = {{"default_depth", 4.5}};

  const auto cfg = parse_run_config(j);
  CHECK(cfg.seed == 7);
  CHECK(cfg.optim.lr_scene == 0.02);
  CHECK(cfg.optim.max_steps == 44);
  CHECK(cfg.optim.patience == 9);
  CHECK(cfg.optim.loss.gamma_perceptual == 0.1);
  CHECK(cfg.optim.loss.lambda_reproj == 0.0);
  CHECK(cfg.optim.loss.reproj_norm == ReprojNorm::kL1);
  CHECK(cfg.optim.loss.reduction == Reduction::kSum);
  CHECK(cfg.optim.render.background.y() == 0.2);
  CHECK(cfg.optim.render.use_tiles == false);
  CHECK(cfg.init.default_depth == 4.5);
  // Untouched settings keep their defaults.
  CHECK(cfg.optim.lr_pose == 1e-3);

  auto bad = j;
  bad["optim"]["learning_rate"] = 0.1;
  CHECK_THROWS_WITH_AS(parse_run_config(bad),
                       doctest::Contains("optim.learning_rate"),
                       std::runtime_error);
  bad = j;
  bad["momentum"] = 0.9;
  CHECK_THROWS_AS(parse_run_config(bad), std::runtime_error);
  bad = j;
  bad["loss"]["reproj_norm"] = "linf";
  CHECK_THROWS_AS(parse_run_config(bad), std::runtime_error);
}

TEST_CASE("config files load from both formats") {
  const auto toml_path = temp_path("io_cfg.toml");
  const auto json_path = temp_path("io_cfg.json");
  {
    std::ofstream out(toml_path);
    out << "seed = 12\n[optim]\nmax_steps = 33\n[loss]\nlambda_reproj = 0.5\n";
  }
  {
    std::ofstream out(json_path);
    out << R"({"seed": 12, "optim": {"max_steps": 33}, "loss": {"lambda_reproj": 0.5}})";
  }
  const auto a = load_run_config(toml_path);
  const auto b = load_run_config(json_path);
  CHECK(a.seed == 12);
  CHECK(a.optim.max_steps == b.optim.max_steps);
  CHECK(a.optim.loss.lambda_reproj == b.optim.loss.lambda_reproj);
  std::remove(toml_path.c_str());
  std::remove(json_path.c_str());
}
