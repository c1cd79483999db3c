#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "pgrasp/parts.hpp"

namespace pgrasp {

struct Grasp;  // physics.hpp

constexpr int kImageSize = 64;

using Image = Eigen::Array<double, kImageSize, kImageSize>;  // row-major pixel grid, pixels(i, j) = row i, col j

// Top-down orthographic depth image. Pixel values are distances from the
// camera plane to the first surface, in meters. Row index grows with -y in
// the world, column index with +x; the patch frame is rotated by
// rotation_world relative to the world axes.
struct DepthImage {
  Image pixels;
  double meters_per_pixel = 0.0;
  Vec2 center_world = Vec2::Zero();
  double rotation_world = 0.0;
};

// Object-centric full view: value is camera_height - part.height inside the
// silhouette and camera_height elsewhere; center_world is the object centroid.
DepthImage render_full(const Part& part, const Pose& pose, double window_side,
                       double camera_height);

// Axis-aligned sampling of the analytic top-surface height (part.height
// inside the silhouette, 0 outside). Cells are anchored to world-frame
// multiples of kFieldCell, so two fields built over different cover
// rectangles agree bit-exactly wherever both cover the silhouette.
constexpr double kFieldCell = 0.15 / 128.0;

class HeightField {
 public:
  HeightField(const Part& part, const Pose& pose, const Rect& cover);

  // Bilinear surface height at a world point; cells outside the cover
  // rectangle read as background (height 0).
  double sample(const Vec2& world) const;

 private:
  double cell_at(long ix, long iy) const;
  long ix0_ = 0, iy0_ = 0;
  long nx_ = 0, ny_ = 0;
  Eigen::ArrayXXd heights_;
};

// Grasp-centric patch: centered at the world grasp position, image x-axis
// aligned with the gripper closing axis. Samples the analytic height field
// with bilinear interpolation on the anchored half-pixel grid.
DepthImage render_grasp_patch(const Part& part, const Pose& pose, const Grasp& grasp,
                              double window_side, double camera_height);

// Same render against a prebuilt field (the field must cover the whole
// silhouette). center_world is the world grasp position, rotation the
// closing-axis angle.
DepthImage render_grasp_patch(const HeightField& field, double part_height,
                              const Vec2& center_world, double rotation,
                              double window_side, double camera_height);

// Per-pixel iid Gaussian depth noise, deterministic per seed.
DepthImage add_noise(const DepthImage& img, double sigma, std::uint64_t noise_seed);

// Zero-mean unit-variance standardization (population std). Near-constant
// images only get the mean subtracted.
Image standardize(const Image& img);

}  // namespace pgrasp
