#include <doctest.h>

#include "test_util.hpp"
#include "usplat/loss/losses.hpp"

using namespace usplat;
using testutil::rel_err;

namespace {

Image<double> random_image(Rng& rng, int w, int h) {
  Image<double> img = Image<double>::zeros(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set(x, y, Vec3<double>(rng.uniform(), rng.uniform(), rng.uniform()));
  return img;
}

}  // namespace

TEST_CASE("zero perceptual weight reduces the photometric loss to plain mse") {
  Rng rng(61);
  // Large enough for the 11x11 structural window.
  const auto ref = random_image(rng, 16, 12);
  const auto img = random_image(rng, 16, 12);
  LossConfig<double> cfg;
  cfg.gamma_perceptual = 0.0;
  CHECK(rendering_loss(ref, img, cfg) == image_mse(ref, img));
  cfg.gamma_perceptual = 0.05;
  cfg.perceptual = Perceptual::kNone;
  CHECK(rendering_loss(ref, img, cfg) == image_mse(ref, img));
  cfg.perceptual = Perceptual::kDssim;
  CHECK(rendering_loss(ref, img, cfg) != image_mse(ref, img));
}

TEST_CASE("photometric gradient matches finite differences") {
  Rng rng(62);
  const int w = 16, h = 16;
  const auto ref = random_image(rng, w, h);
  auto img = random_image(rng, w, h);
  LossConfig<double> cfg;  // mse + structural term
  const double d_upstream = 1.7;

  Image<double> d_img = Image<double>::zeros(w, h);
  const double loss = rendering_loss_backward(ref, img, cfg, d_upstream, d_img);
  CHECK(loss == doctest::Approx(rendering_loss(ref, img, cfg)).epsilon(1e-12));

  const double fd_h = 1e-6;
  for (int probe = 0; probe < 30; ++probe) {
    const int x = int(rng.index(std::size_t(w)));
    const int y = int(rng.index(std::size_t(h)));
    const int c = int(rng.index(3));
    const double orig = img.ch[c](y, x);
    img.ch[c](y, x) = orig + fd_h;
    const double lp = rendering_loss(ref, img, cfg);
    img.ch[c](y, x) = orig - fd_h;
    const double lm = rendering_loss(ref, img, cfg);
    img.ch[c](y, x) = orig;
    const double fd = d_upstream * (lp - lm) / (2 * fd_h);
    CHECK(rel_err(d_img.ch[c](y, x), fd) < 1e-5);
  }
}

namespace {

/// One block of pixel-aligned gaussians unprojected from view 0 with a
/// per-pixel offset injected in pixel space.
struct ReprojFixture {
  Scene<double> scene;
  SceneAlignment alignment;
  std::vector<SE3Pose<double>> cams;  // world-to-camera
  std::vector<CameraIntrinsics<double>> intr;
};

ReprojFixture exact_fixture(int w, int h, double du = 0.0, double dv = 0.0) {
  ReprojFixture f;
  // Power-of-two focals keep the unproject/reproject round trip lossless,
  // so the offsets below survive bit-for-bit.
  f.intr.push_back({64.0, 64.0, 20.0, 14.0, 40, 28});
  f.cams.push_back(SE3Pose<double>::identity());
  f.alignment.blocks = {SceneAlignment::ViewBlock{0, w, h, 0}};
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      GaussianPrimitive<double> g;
      g.center = unproject(f.intr[0], px + 0.5 + du, py + 0.5 + dv, 2.0);
      f.scene.gaussians.push_back(g);
    }
  return f;
}

}  // namespace

TEST_CASE("reprojection vanishes when every center sits on its pixel ray") {
  auto f = exact_fixture(6, 5);
  LossConfig<double> cfg;
  CHECK(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg) < 1e-9);
}

TEST_CASE("a single two-pixel offset scores exactly two") {
  auto f = exact_fixture(1, 1, 2.0, 0.0);
  LossConfig<double> cfg;
  cfg.reduction = Reduction::kMean;
  CHECK(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg) == 2.0);
  cfg.reduction = Reduction::kSum;
  CHECK(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg) == 2.0);
  cfg.reproj_norm = ReprojNorm::kL1;
  CHECK(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg) == 2.0);
}

TEST_CASE("l1 norm, reductions, and multiple blocks") {
  auto f = exact_fixture(2, 1, 1.5, -2.0);
  LossConfig<double> cfg;
  cfg.reproj_norm = ReprojNorm::kL1;
  cfg.reduction = Reduction::kSum;
  CHECK(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg) ==
        doctest::Approx(7.0).epsilon(1e-14));
  cfg.reduction = Reduction::kMean;
  CHECK(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg) ==
        doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("reprojection is invariant under a global rescaling") {
  Rng rng(63);
  ReprojFixture f;
  f.intr.assign(2, {60.0, 60.0, 16.0, 16.0, 32, 32});
  SE3Pose<double> c2w0, c2w1;
  c2w1.rotation = rng.rotation_with_angle(0.2);
  c2w1.translation = rng.normal3() * 0.2;
  f.cams = {se3_inverse(c2w0), se3_inverse(c2w1)};
  f.alignment.blocks = {SceneAlignment::ViewBlock{0, 3, 2, 0},
                        SceneAlignment::ViewBlock{1, 2, 2, 6}};
  for (int i = 0; i < 10; ++i) {
    GaussianPrimitive<double> g;
    g.center = Vec3<double>(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                            rng.uniform(1.0, 3.0));
    f.scene.gaussians.push_back(g);
  }
  LossConfig<double> cfg;
  const double base = reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg);
  CHECK(base > 0.1);  // generic centers should not already be aligned

  const double s = 3.7;
  auto scaled = f;
  for (auto& g : scaled.scene.gaussians) g.center *= s;
  for (auto& cam : scaled.cams) cam.translation *= s;
  const double big =
      reprojection_loss(scaled.scene, scaled.alignment, scaled.cams, scaled.intr, cfg);
  CHECK(std::abs(base - big) < 1e-9);
}

TEST_CASE("behind-camera centers pay the clamp and send no gradient") {
  auto f = exact_fixture(2, 1);
  f.scene.gaussians[1].center = Vec3<double>(0.1, 0.2, -1.0);
  LossConfig<double> cfg;
  SceneGrad<double> grads;
  grads.resize_like(f.scene);
  grads.set_zero();
  const double loss =
      reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg, 1.0, &grads);
  // Mean of (0, clamp_px).
  CHECK(loss == doctest::Approx(cfg.clamp_px / 2).epsilon(1e-12));
  CHECK(grads.center[1].norm() == 0.0);
}

TEST_CASE("reprojection gradients match finite differences") {
  Rng rng(64);
  ReprojFixture f;
  f.intr.assign(2, {60.0, 58.0, 16.0, 16.5, 32, 32});
  SE3Pose<double> c2w1;
  c2w1.rotation = rng.rotation_with_angle(0.3);
  c2w1.translation = rng.normal3() * 0.2;
  f.cams = {SE3Pose<double>::identity(), se3_inverse(c2w1)};
  f.alignment.blocks = {SceneAlignment::ViewBlock{1, 3, 2, 0}};
  for (int i = 0; i < 6; ++i) {
    GaussianPrimitive<double> g;
    g.center = c2w1.apply(unproject(f.intr[1], rng.uniform(2.0, 30.0),
                                    rng.uniform(2.0, 30.0), rng.uniform(1.0, 3.0)));
    f.scene.gaussians.push_back(g);
  }

  for (const auto norm : {ReprojNorm::kL2, ReprojNorm::kL1}) {
    LossConfig<double> cfg;
    cfg.reproj_norm = norm;
    const double d_upstream = 0.8;
    SceneGrad<double> grads;
    grads.resize_like(f.scene);
    grads.set_zero();
    std::vector<PoseGrad<double>> pose_grads(2);
    reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg, d_upstream,
                      &grads, &pose_grads);

    const double h = 1e-6;
    const auto fd_of = [&](double& slot) {
      const double orig = slot;
      slot = orig + h;
      const double lp = reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg);
      slot = orig - h;
      const double lm = reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg);
      slot = orig;
      return d_upstream * (lp - lm) / (2 * h);
    };
    for (std::size_t i = 0; i < f.scene.size(); ++i)
      for (int k = 0; k < 3; ++k) {
        const double fd = fd_of(f.scene.gaussians[i].center[k]);
        CHECK(rel_err(grads.center[i][k], fd) < 1e-6);
      }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        const double fd = fd_of(f.cams[1].rotation(r, c));
        CHECK(rel_err(pose_grads[1].rotation(r, c), fd) < 1e-6);
      }
    for (int k = 0; k < 3; ++k) {
      const double fd = fd_of(f.cams[1].translation[k]);
      CHECK(rel_err(pose_grads[1].translation[k], fd) < 1e-6);
    }
    CHECK(pose_grads[0].rotation.norm() == 0.0);  // no block on view 0
  }
}

TEST_CASE("reprojection rejects inconsistent or empty alignments") {
  auto f = exact_fixture(2, 2);
  LossConfig<double> cfg;
  f.alignment.blocks[0].width = 3;
  CHECK_THROWS_AS(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg),
                  std::invalid_argument);
  f.scene.gaussians.clear();
  f.alignment.blocks.clear();
  CHECK_THROWS_AS(reprojection_loss(f.scene, f.alignment, f.cams, f.intr, cfg),
                  std::invalid_argument);
}

TEST_CASE("pose supervision is zero at the truth and positive elsewhere") {
  Rng rng(65);
  std::vector<SE3Pose<double>> gt(3);
  for (std::size_t v = 1; v < 3; ++v) {
    gt[v].rotation = rng.rotation();
    gt[v].translation = rng.normal3();
  }
  LossConfig<double> cfg;
  // Not an exact zero: acos of a trace rounded just below 3 can report an
  // angle near 1e-8 even for bitwise-equal rotations.
  CHECK(pose_supervision_loss(gt, gt, cfg) < 1e-8);

  auto pred = gt;
  pred[1].rotation = rng.rotation_with_angle(0.3) * pred[1].rotation;
  pred[2].translation += Vec3<double>(0.1, 0, 0);
  // 0.1 * mean(theta) + 0.01 * mean(|dt|^2) over the two free views.
  const double expect = 0.1 * (0.3 / 2) + 0.01 * (0.01 / 2);
  CHECK(pose_supervision_loss(pred, gt, cfg) ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("pose supervision gradients match finite differences") {
  Rng rng(66);
  std::vector<SE3Pose<double>> gt(3), pred(3);
  for (std::size_t v = 1; v < 3; ++v) {
    gt[v].rotation = rng.rotation();
    gt[v].translation = rng.normal3();
    pred[v].rotation = rng.rotation_with_angle(0.4) * gt[v].rotation;
    pred[v].translation = gt[v].translation + rng.normal3() * 0.2;
  }
  LossConfig<double> cfg;
  const double d_upstream = 1.3;
  std::vector<PoseResidualGrad<double>> grads;
  pose_supervision_loss(pred, gt, cfg, d_upstream, &grads);
  REQUIRE(grads.size() == 3);
  CHECK(grads[0].rotation.norm() == 0.0);

  const double h = 1e-6;
  const auto fd_of = [&](double& slot) {
    const double orig = slot;
    slot = orig + h;
    const double lp = pose_supervision_loss(pred, gt, cfg);
    slot = orig - h;
    const double lm = pose_supervision_loss(pred, gt, cfg);
    slot = orig;
    return d_upstream * (lp - lm) / (2 * h);
  };
  for (std::size_t v = 1; v < 3; ++v) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(rel_err(grads[v].rotation(r, c), fd_of(pred[v].rotation(r, c))) < 1e-5);
    for (int k = 0; k < 3; ++k)
      CHECK(rel_err(grads[v].translation[k], fd_of(pred[v].translation[k])) < 1e-5);
  }
}
