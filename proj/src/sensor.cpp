#include "pgrasp/sensor.hpp"

#include <cmath>
#include <stdexcept>

#include "pgrasp/physics.hpp"
#include "pgrasp/rng.hpp"

namespace pgrasp {

namespace {

void check_camera(const Part& part, double camera_height) {
  if (camera_height <= part.height)
    throw std::invalid_argument("camera height must exceed the part height");
}

}  // namespace

HeightField::HeightField(const Part& part, const Pose& pose, const Rect& cover) {
  ix0_ = static_cast<long>(std::floor(cover.min.x() / kFieldCell)) - 1;
  iy0_ = static_cast<long>(std::floor(cover.min.y() / kFieldCell)) - 1;
  const long ix1 = static_cast<long>(std::ceil(cover.max.x() / kFieldCell)) + 1;
  const long iy1 = static_cast<long>(std::ceil(cover.max.y() / kFieldCell)) + 1;
  nx_ = ix1 - ix0_ + 1;
  ny_ = iy1 - iy0_ + 1;
  heights_.setZero(nx_, ny_);
  for (long ix = 0; ix < nx_; ++ix) {
    for (long iy = 0; iy < ny_; ++iy) {
      const Vec2 node((ix0_ + ix) * kFieldCell, (iy0_ + iy) * kFieldCell);
      if (silhouette_contains(part, pose, node)) heights_(ix, iy) = part.height;
    }
  }
}

double HeightField::cell_at(long ix, long iy) const {
  ix -= ix0_;
  iy -= iy0_;
  if (ix < 0 || iy < 0 || ix >= nx_ || iy >= ny_) return 0.0;
  return heights_(ix, iy);
}

double HeightField::sample(const Vec2& world) const {
  // Continuous node coordinates with nodes at integer multiples of the cell.
  const double u = world.x() / kFieldCell;
  const double v = world.y() / kFieldCell;
  const long ix = static_cast<long>(std::floor(u));
  const long iy = static_cast<long>(std::floor(v));
  const double fx = u - ix;
  const double fy = v - iy;
  const double h00 = cell_at(ix, iy), h10 = cell_at(ix + 1, iy);
  const double h01 = cell_at(ix, iy + 1), h11 = cell_at(ix + 1, iy + 1);
  return (1.0 - fx) * ((1.0 - fy) * h00 + fy * h01) + fx * ((1.0 - fy) * h10 + fy * h11);
}

DepthImage render_full(const Part& part, const Pose& pose, double window_side,
                       double camera_height) {
  if (window_side <= 0.0) throw std::invalid_argument("window_side must be positive");
  check_camera(part, camera_height);
  DepthImage img;
  img.meters_per_pixel = window_side / kImageSize;
  img.center_world = pose.translation();  // part frame origin is its centroid
  img.rotation_world = 0.0;
  const double half = (kImageSize - 1) / 2.0;
  for (int i = 0; i < kImageSize; ++i) {
    for (int j = 0; j < kImageSize; ++j) {
      const Vec2 p = img.center_world +
                     Vec2((j - half) * img.meters_per_pixel, (half - i) * img.meters_per_pixel);
      img.pixels(i, j) = camera_height - (silhouette_contains(part, pose, p) ? part.height : 0.0);
    }
  }
  return img;
}

DepthImage render_grasp_patch(const HeightField& field, double part_height,
                              const Vec2& center_world, double rotation,
                              double window_side, double camera_height) {
  if (window_side <= 0.0) throw std::invalid_argument("window_side must be positive");
  if (camera_height <= part_height)
    throw std::invalid_argument("camera height must exceed the part height");
  DepthImage img;
  img.meters_per_pixel = window_side / kImageSize;
  img.center_world = center_world;
  img.rotation_world = rotation;
  const Vec2 ex(std::cos(rotation), std::sin(rotation));
  const Vec2 ey(-std::sin(rotation), std::cos(rotation));
  const double half = (kImageSize - 1) / 2.0;
  for (int i = 0; i < kImageSize; ++i) {
    for (int j = 0; j < kImageSize; ++j) {
      const Vec2 p = center_world + (j - half) * img.meters_per_pixel * ex +
                     (half - i) * img.meters_per_pixel * ey;
      img.pixels(i, j) = camera_height - field.sample(p);
    }
  }
  return img;
}

DepthImage render_grasp_patch(const Part& part, const Pose& pose, const Grasp& grasp,
                              double window_side, double camera_height) {
  check_camera(part, camera_height);
  const Vec2 center = pose.translation() + Vec2(grasp.gx, grasp.gy);
  // Cover the whole silhouette plus the rotated patch extent so background
  // reads outside the field are always correct.
  Rect cover = bounding_box(part, pose);
  const double reach = window_side * 0.75;  // > half diagonal of the window
  cover.min = cover.min.cwiseMin(center - Vec2(reach, reach));
  cover.max = cover.max.cwiseMax(center + Vec2(reach, reach));
  const HeightField field(part, pose, cover);
  return render_grasp_patch(field, part.height, center, grasp.gtheta, window_side, camera_height);
}

DepthImage add_noise(const DepthImage& img, double sigma, std::uint64_t noise_seed) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  DepthImage out = img;
  if (sigma == 0.0) return out;
  Rng rng(noise_seed);
  // Row-major draw order fixes the mapping from seed to noise pattern.
  for (int i = 0; i < kImageSize; ++i)
    for (int j = 0; j < kImageSize; ++j) out.pixels(i, j) += rng.normal(0.0, sigma);
  return out;
}

Image standardize(const Image& img) {
  const double mean = img.mean();
  Image centered = img - mean;
  const double var = centered.square().mean();
  const double std = std::sqrt(var);
  if (std <= 1e-9) return centered;
  return centered / std;
}

}  // namespace pgrasp
