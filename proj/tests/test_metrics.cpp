#include <doctest.h>

#include "test_util.hpp"
#include "usplat/metrics/metrics.hpp"

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

/// Direct O(HW * window^2) SSIM with the same constants, as an
/// independent check on the separable implementation.
double ssim_brute(const Image<double>& ref, const Image<double>& img) {
  const auto k = usplat::detail::ssim_kernel<double>();
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const int w = ref.width(), h = ref.height();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  double total = 0;
  for (int c = 0; c < 3; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int j = 0; j < kSsimWindow; ++j)
          for (int i = 0; i < kSsimWindow; ++i) {
            const double wgt = k[std::size_t(j)] * k[std::size_t(i)];
            const double a = ref.ch[c](oy + j, ox + i);
            const double b = img.ch[c](oy + j, ox + i);
            mx += wgt * a;
            my += wgt * b;
            xx += wgt * a * a;
            yy += wgt * b * b;
            xy += wgt * a * b;
          }
        const double num = (2 * mx * my + c1) * (2 * (xy - mx * my) + c2);
        const double den =
            (mx * mx + my * my + c1) * ((xx - mx * mx) + (yy - my * my) + c2);
        total += num / den;
      }
  return total / double(3 * oh * ow);
}

}  // namespace

TEST_CASE("psnr of a constant 0.1 offset is 20 dB") {
  const auto ref = Image<double>::constant(24, 16, Vec3<double>(0.4, 0.5, 0.6));
  const auto img = Image<double>::constant(24, 16, Vec3<double>(0.5, 0.6, 0.7));
  CHECK(std::abs(psnr(ref, img) - 20.0) < 1e-12);
}

TEST_CASE("psnr caps on an exact match") {
  Rng rng(71);
  const auto img = random_image(rng, 10, 14);
  CHECK(psnr(img, img) == kPsnrCap);
}

TEST_CASE("ssim of an image with itself is exactly one") {
  Rng rng(72);
  const auto img = random_image(rng, 20, 15);
  CHECK(ssim(img, img) == 1.0);
  CHECK(dssim(img, img) == 0.0);
}

TEST_CASE("separable ssim equals the direct windowed computation") {
  Rng rng(73);
  const auto ref = random_image(rng, 22, 17);
  auto img = random_image(rng, 22, 17);
  // Correlated pair as well as an independent one.
  CHECK(std::abs(ssim(ref, img) - ssim_brute(ref, img)) < 1e-12);
  for (int c = 0; c < 3; ++c) img.ch[c] = 0.7 * ref.ch[c] + 0.1;
  CHECK(std::abs(ssim(ref, img) - ssim_brute(ref, img)) < 1e-12);
  CHECK(ssim(ref, img) < 1.0);
}

TEST_CASE("ssim rejects bad shapes") {
  Rng rng(74);
  const auto a = random_image(rng, 16, 16);
  const auto b = random_image(rng, 16, 15);
  const auto tiny = random_image(rng, 10, 10);
  CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("ssim gradient matches finite differences") {
  Rng rng(75);
  const int w = 16, h = 16;
  const auto ref = random_image(rng, w, h);
  auto img = random_image(rng, w, h);
  const double d_upstream = -0.4;
  Image<double> d_img = Image<double>::zeros(w, h);
  const double s = ssim_backward(ref, img, d_upstream, d_img);
  CHECK(s == doctest::Approx(ssim(ref, img)).epsilon(1e-12));

  const double fd_h = 1e-6;
  for (int probe = 0; probe < 30; ++probe) {
    const int x = int(rng.index(std::size_t(w)));
    const int y = int(rng.index(std::size_t(h)));
    const int c = int(rng.index(3));
    const double orig = img.ch[c](y, x);
    img.ch[c](y, x) = orig + fd_h;
    const double sp = ssim(ref, img);
    img.ch[c](y, x) = orig - fd_h;
    const double sm = ssim(ref, img);
    img.ch[c](y, x) = orig;
    const double fd = d_upstream * (sp - sm) / (2 * fd_h);
    CHECK(rel_err(d_img.ch[c](y, x), fd) < 1e-5);
  }
}

TEST_CASE("pose auc hand values") {
  CHECK(pose_auc({0.0}, 5.0) == 1.0);
  CHECK(std::abs(pose_auc({2.5}, 5.0) - 0.5) < 1e-12);
  CHECK(std::abs(pose_auc({2.0, 3.0, 3.0}, 5.0) - 7.0 / 15.0) < 1e-12);
  // Errors beyond tau contribute nothing.
  CHECK(pose_auc({17.0}, 5.0) == 0.0);
  CHECK(std::abs(pose_auc({1.0, 99.0}, 5.0) - 0.4) < 1e-12);
}

TEST_CASE("pose auc agrees with explicit cdf integration") {
  Rng rng(76);
  std::vector<double> errors;
  for (int i = 0; i < 40; ++i) errors.push_back(rng.uniform(0.0, 12.0));
  const double tau = 5.0;
  // Integrate the empirical CDF over [0, tau] by its breakpoints.
  auto sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  double area = 0, prev = 0;
  std::size_t below = 0;
  for (double e : sorted) {
    if (e >= tau) break;
    area += double(below) / double(sorted.size()) * (e - prev);
    prev = e;
    ++below;
  }
  area += double(below) / double(sorted.size()) * (tau - prev);
  CHECK(std::abs(pose_auc(errors, tau) - area / tau) < 1e-12);
}

TEST_CASE("pose auc input validation") {
  CHECK_THROWS_AS(pose_auc({}, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(pose_auc({1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(pose_auc({1.0}, -2.0), std::invalid_argument);
}
