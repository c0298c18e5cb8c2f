#include <doctest.h>

#include "test_util.hpp"
#include "usplat/core/gaussian.hpp"

using namespace usplat;
using testutil::fd_central;
using testutil::rel_err;

TEST_CASE("quaternion to rotation for the canonical cases") {
  const Vec4d identity(1, 0, 0, 0);
  CHECK((unit_quat_to_rotation(identity) - Mat3d::Identity()).norm() == 0.0);
  // 90 degrees about z: (cos45, 0, 0, sin45).
  const double s = std::sqrt(0.5);
  const Vec4d qz(s, 0, 0, s);
  Mat3d expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((unit_quat_to_rotation(qz) - expect).norm() < 1e-15);
}

TEST_CASE("quaternion rotations are orthonormal for random units") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    Vec4d q;
    for (int k = 0; k < 4; ++k) q[k] = rng.normal();
    q.normalize();
    const Mat3d r = unit_quat_to_rotation(q);
    CHECK((r.transpose() * r - Mat3d::Identity()).norm() < 1e-14);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    // q and -q encode the same rotation.
    CHECK((unit_quat_to_rotation<double>(-q) - r).norm() < 1e-14);
  }
}

TEST_CASE("quaternion rotation jacobian matches finite differences") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    Vec4d q;
    for (int k = 0; k < 4; ++k) q[k] = rng.normal();
    q.normalize();
    Mat3d upstream;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) upstream(r, c) = rng.normal();
    const auto jac = unit_quat_to_rotation_jacobian(q);
    for (int k = 0; k < 4; ++k) {
      // d/dq_k of <R(q), upstream> with q treated as free (not renormalized).
      const double analytic = (jac[std::size_t(k)].array() * upstream.array()).sum();
      const double fd = fd_central(
          [&](double x) {
            Vec4d probe = q;
            probe[k] = x;
            return (unit_quat_to_rotation(probe).array() * upstream.array())
                .sum();
          },
          q[k], 1e-6);
      CHECK(rel_err(analytic, fd) < 1e-6);
    }
  }
}

TEST_CASE("quat_normalize_backward matches finite differences") {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    Vec4d q;
    for (int k = 0; k < 4; ++k) q[k] = rng.normal() * 2;
    if (q.norm() < 0.1) q[0] += 1;
    const Vec4d upstream(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Vec4d grad = quat_normalize_backward(q, upstream);
    for (int k = 0; k < 4; ++k) {
      const double fd = fd_central(
          [&](double x) {
            Vec4d probe = q;
            probe[k] = x;
            return probe.normalized().dot(upstream);
          },
          q[k], 1e-6);
      CHECK(rel_err(grad[k], fd) < 1e-6);
    }
  }
}

TEST_CASE("covariance reconstructs R diag(s^2) R^T and is symmetric PSD") {
  Rng rng(34);
  for (int i = 0; i < 50; ++i) {
    GaussianPrimitive<double> g;
    Vec4d q;
    for (int k = 0; k < 4; ++k) q[k] = rng.normal();
    g.rotation = q.normalized();
    g.log_scale = Vec3d(rng.normal(), rng.normal(), rng.normal()) * 0.5;
    const Mat3d cov = g.covariance();
    CHECK((cov - cov.transpose()).norm() < 1e-14);
    const Mat3d r = unit_quat_to_rotation(g.rotation);
    const Vec3d s2 = g.scale().array().square();
    const Mat3d expect = r * s2.asDiagonal() * r.transpose();
    CHECK((cov - expect).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3d> eig(cov);
    CHECK(eig.eigenvalues().minCoeff() > 0);
  }
}

TEST_CASE("sh basis constants and colors") {
  // Degree 0 is direction-independent.
  double basis[kShMaxCoeffs];
  sh_basis(0, Vec3d(0, 0, 1), basis);
  CHECK(basis[0] == doctest::Approx(0.28209479177387814).epsilon(1e-15));

  ShVec<double> sh{1, {}};
  sh.coeffs[0] = sh_dc_from_rgb(Vec3d(0.25, 0.5, 0.75));
  const Vec3d rgb = sh_color(sh, Vec3d(0, 0, 1));
  CHECK((rgb - Vec3d(0.25, 0.5, 0.75)).cwiseAbs().maxCoeff() < 1e-15);
  // Clamp at zero for strongly negative coefficients.
  sh.coeffs[0] = sh_dc_from_rgb(Vec3d(-1.0, 0.5, 0.5));
  CHECK(sh_color(sh, Vec3d(1, 0, 0)).x() == 0.0);
}

TEST_CASE("sh basis gradients match finite differences (raw direction)") {
  Rng rng(35);
  for (int degree : {1, 2}) {
    const int n = sh_coeff_count(degree);
    for (int trial = 0; trial < 10; ++trial) {
      const Vec3d d = rng.unit_vector();
      Vec3d grads[kShMaxCoeffs];
      sh_basis_grad(degree, d, grads);
      for (int b = 0; b < n; ++b)
        for (int k = 0; k < 3; ++k) {
          const double fd = fd_central(
              [&](double x) {
                Vec3d probe = d;  // intentionally not renormalized
                probe[k] = x;
                double vals[kShMaxCoeffs];
                sh_basis(degree, probe, vals);
                return vals[b];
              },
              d[k], 1e-6);
          CHECK(rel_err(grads[b][k], fd) < 1e-6);
        }
    }
  }
}

TEST_CASE("assemble and decompose scenes round trip") {
  Rng rng(36);
  std::vector<PixelAlignedGaussianMap<double>> maps;
  for (int v = 0; v < 3; ++v) {
    PixelAlignedGaussianMap<double> map;
    map.view_index = v;
    map.width = 4;
    map.height = 3;
    map.prims.resize(12);
    for (auto& g : map.prims) {
      g.center = rng.normal3();
      Vec4d q;
      for (int k = 0; k < 4; ++k) q[k] = rng.normal();
      g.rotation = q.normalized();
      g.log_scale = rng.normal3() * 0.3;
      g.opacity_logit = rng.normal();
      g.sh = ShVec<double>{1, {}};
      g.sh.coeffs[0] = rng.normal3() * 0.2;
    }
    maps.push_back(map);
  }
  SceneAlignment alignment;
  const Scene<double> scene = assemble_scene(maps, &alignment);
  CHECK(scene.size() == 36);
  CHECK(alignment.total() == 36);
  CHECK(alignment.blocks[1].offset == 12);

  const auto back = decompose_scene(scene, alignment);
  REQUIRE(back.size() == 3);
  for (int v = 0; v < 3; ++v)
    for (int i = 0; i < 12; ++i) {
      CHECK((back[std::size_t(v)].prims[std::size_t(i)].center -
             maps[std::size_t(v)].prims[std::size_t(i)].center)
                .norm() == 0.0);
    }
}

TEST_CASE("scene validation names the offending primitive") {
  Scene<double> scene;
  GaussianPrimitive<double> g;
  g.sh = ShVec<double>{1, {}};
  scene.gaussians.assign(3, g);
  CHECK_NOTHROW(validate_scene(scene));
  scene.gaussians[2].center.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(validate_scene(scene), doctest::Contains("gaussian 2"),
                       std::invalid_argument);
  scene.gaussians[2].center.x() = 0;
  scene.gaussians[1].rotation = Vec4d(2, 0, 0, 0);  // far from unit
  CHECK_THROWS(validate_scene(scene));
  scene.gaussians[1].rotation = Vec4d(1, 0, 0, 0);
  scene.gaussians[0].sh.count = 5;  // not a full degree
  CHECK_THROWS(validate_scene(scene));
}
