#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pgrasp/physics.hpp"
#include "pgrasp/rng.hpp"
#include "pgrasp/sensor.hpp"
#include "test_support.hpp"

using namespace pgrasp;
using namespace pgrasp::testing;

namespace {
constexpr double kCam = 0.70;
constexpr double kFullWindow = 0.30;
constexpr double kPatchWindow = 0.15;
}  // namespace

TEST_CASE("render_full analytic heights and window geometry") {
  const Part box = make_rect_part(0.08, 0.05, 0.05);
  const Pose pose{0.0, 0.0, 0.0};
  const DepthImage img = render_full(box, pose, kFullWindow, kCam);
  CHECK(img.meters_per_pixel == doctest::Approx(kFullWindow / kImageSize).epsilon(1e-15));
  CHECK(img.center_world.norm() < 1e-15);
  CHECK(img.rotation_world == 0.0);
  // Interior pixel (image center) and corner background.
  CHECK(img.pixels(kImageSize / 2, kImageSize / 2) == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(img.pixels(0, 0) == kCam);
  for (int i = 0; i < kImageSize; ++i)
    for (int j = 0; j < kImageSize; ++j) {
      CHECK(std::isfinite(img.pixels(i, j)));
      CHECK(img.pixels(i, j) >= 0.0);
      CHECK(img.pixels(i, j) <= kCam);
    }
}

TEST_CASE("render_full matches a brute-force per-pixel containment scan") {
  const PartFamily families[] = {PartFamily::kNgon, PartFamily::kGear,
                                 PartFamily::kLBracket, PartFamily::kSlottedBar,
                                 PartFamily::kEllipse};
  Rng rng(5);
  for (int p = 0; p < 5; ++p) {
    const Part part = generate_part(50 + p, families[p]);
    const Pose pose{rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                    rng.uniform(-kPi, kPi)};
    const DepthImage img = render_full(part, pose, kFullWindow, kCam);
    const double mpp = img.meters_per_pixel;
    for (int i = 0; i < kImageSize; ++i)
      for (int j = 0; j < kImageSize; ++j) {
        const Vec2 world = img.center_world +
                           Vec2((j - (kImageSize - 1) / 2.0) * mpp,
                                -(i - (kImageSize - 1) / 2.0) * mpp);
        const double expected =
            silhouette_contains(part, pose, world) ? kCam - part.height : kCam;
        CHECK(img.pixels(i, j) == expected);
      }
  }
}

TEST_CASE("render_full rejects a camera below the part top") {
  const Part box = make_rect_part(0.05, 0.05, 0.05);
  CHECK_THROWS_AS(render_full(box, {0, 0, 0}, kFullWindow, 0.04), std::invalid_argument);
}

TEST_CASE("grasp patch at the centroid with zero angles matches the full render") {
  const Part box = make_rect_part(0.08, 0.05, 0.03);
  const Pose pose{0.0, 0.0, 0.0};
  Grasp grasp;
  grasp.gx = 0.0;
  grasp.gy = 0.0;
  grasp.gz = 0.015;
  grasp.gtheta = 0.0;
  const DepthImage full = render_full(box, pose, kPatchWindow, kCam);
  const DepthImage patch = render_grasp_patch(box, pose, grasp, kPatchWindow, kCam);
  CHECK(patch.rotation_world == doctest::Approx(0.0));
  CHECK((patch.center_world - full.center_world).norm() < 1e-15);
  // Patch sampling is bilinear on the anchored grid; at this alignment the
  // sample points coincide with grid nodes, so agreement is near-exact.
  CHECK((patch.pixels - full.pixels).abs().maxCoeff() < 1e-9);
}

TEST_CASE("grasp patch is equivariant under joint world rotation") {
  // A convex part with modest height keeps the interpolation band (the only
  // rotation-variant pixels) well under the 1 mm mean tolerance.
  Part part = generate_part(9, PartFamily::kNgon);
  part.height = 0.015;
  Grasp grasp;
  grasp.gx = 0.004;
  grasp.gy = -0.006;
  grasp.gz = 0.01;
  grasp.gtheta = 0.4;
  const DepthImage base =
      render_grasp_patch(part, Pose{0, 0, 0}, grasp, kPatchWindow, kCam);
  for (double phi : {0.3, -1.1, 2.5}) {
    const DepthImage rot =
        render_grasp_patch(part, Pose{0, 0, phi}, grasp, kPatchWindow, kCam);
    CHECK((rot.pixels - base.pixels).abs().mean() < 0.001);
  }
}

TEST_CASE("grasp patch over empty space is all background") {
  const Part box = make_rect_part(0.03, 0.03, 0.02);
  Grasp grasp;
  grasp.gx = 0.4;  // far outside the silhouette and the extended window
  grasp.gy = 0.4;
  grasp.gz = 0.01;
  grasp.gtheta = 0.0;
  const DepthImage patch = render_grasp_patch(box, {0, 0, 0}, grasp, kPatchWindow, kCam);
  CHECK((patch.pixels == kCam).all());
}

TEST_CASE("add_noise statistics, determinism, and sigma-zero identity") {
  const Part box = make_rect_part(0.06, 0.04, 0.02);
  const DepthImage clean = render_full(box, {0, 0, 0}, kFullWindow, kCam);

  const DepthImage same = add_noise(clean, 0.0, 42);
  CHECK((same.pixels == clean.pixels).all());

  const DepthImage a = add_noise(clean, 0.003, 42);
  const DepthImage b = add_noise(clean, 0.003, 42);
  CHECK((a.pixels == b.pixels).all());
  const DepthImage c = add_noise(clean, 0.003, 43);
  CHECK((a.pixels != c.pixels).any());

  double sum = 0.0, sum2 = 0.0;
  const long n = 100L * kImageSize * kImageSize;
  for (int rep = 0; rep < 100; ++rep) {
    const DepthImage noisy = add_noise(clean, 0.003, 1000 + rep);
    const Image diff = noisy.pixels - clean.pixels;
    sum += diff.sum();
    sum2 += (diff * diff).sum();
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sum2 / n - mean * mean);
  CHECK(std::abs(mean) < 1e-4);
  CHECK(stddev == doctest::Approx(0.003).epsilon(0.03));
}

TEST_CASE("standardize properties") {
  Image constant = Image::Constant(0.7);
  CHECK(standardize(constant).abs().maxCoeff() < 1e-12);

  // Two-valued image in equal counts maps to {-1, +1}.
  Image two = Image::Constant(0.2);
  for (int i = 0; i < kImageSize; ++i)
    for (int j = 0; j < kImageSize; ++j)
      if ((i + j) % 2 == 0) two(i, j) = 0.6;
  const Image z = standardize(two);
  for (int i = 0; i < kImageSize; ++i)
    for (int j = 0; j < kImageSize; ++j)
      CHECK(z(i, j) == doctest::Approx((i + j) % 2 == 0 ? 1.0 : -1.0).epsilon(1e-12));

  // Arbitrary non-constant image: mean 0, population std 1, idempotent.
  Rng rng(3);
  Image img;
  for (int i = 0; i < kImageSize; ++i)
    for (int j = 0; j < kImageSize; ++j) img(i, j) = rng.uniform(0.0, 0.7);
  const Image s = standardize(img);
  const double n = kImageSize * kImageSize;
  CHECK(std::abs(s.mean()) < 1e-10);
  CHECK(std::sqrt((s - s.mean()).square().sum() / n) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK((standardize(s) - s).abs().maxCoeff() < 1e-8);
}

TEST_CASE("noise is applied to raw depth before standardization") {
  // Checksums of the two stage orders differ: standardize is scale-invariant
  // only around its own statistics, so the orders cannot coincide.
  const Part box = make_rect_part(0.06, 0.04, 0.02);
  const DepthImage clean = render_full(box, {0, 0, 0}, kFullWindow, kCam);
  const DepthImage noisy = add_noise(clean, 0.003, 7);
  const Image pipeline = standardize(noisy.pixels);  // collection order
  DepthImage pre;
  pre = clean;
  pre.pixels = standardize(clean.pixels);
  const Image wrong_order = add_noise(pre, 0.003, 7).pixels;
  CHECK((pipeline - wrong_order).abs().maxCoeff() > 1e-3);
  CHECK((pipeline - standardize(add_noise(clean, 0.003, 7).pixels)).abs().maxCoeff() == 0.0);
}

TEST_CASE("height field sampling is anchored to world cells") {
  const Part part = generate_part(17, PartFamily::kSlottedBar);
  const Pose pose{0.01, -0.005, 0.6};
  const Rect tight = bounding_box(part, pose);
  Rect wide = tight;
  wide.min -= Vec2(0.05, 0.08);
  wide.max += Vec2(0.03, 0.06);
  const HeightField small(part, pose, tight);
  const HeightField large(part, pose, wide);
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    const Vec2 q(rng.uniform(tight.min.x(), tight.max.x()),
                 rng.uniform(tight.min.y(), tight.max.y()));
    // Stay a cell away from the tight cover edge where the small field clips.
    if (q.x() < tight.min.x() + 2 * kFieldCell || q.x() > tight.max.x() - 2 * kFieldCell ||
        q.y() < tight.min.y() + 2 * kFieldCell || q.y() > tight.max.y() - 2 * kFieldCell)
      continue;
    CHECK(small.sample(q) == large.sample(q));
  }
}
