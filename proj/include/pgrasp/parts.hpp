#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgrasp/geometry.hpp"

namespace pgrasp {

enum class PartFamily { kNgon, kGear, kLBracket, kSlottedBar, kEllipse };

PartFamily part_family_from_string(const std::string& name);
std::string to_string(PartFamily family);

// 2.5D extruded polygon with uniform density. Vertices live in a frame whose
// origin is the area centroid, so centroid(Part) == (0,0) by construction.
struct Part {
  Ring outer_ring;              // counter-clockwise
  std::vector<Ring> holes;      // clockwise, strictly inside the outer ring
  double height = 0.0;          // extrusion height, meters
  std::uint64_t part_id = 0;
  PartFamily family = PartFamily::kNgon;
};

// Planar resting pose; part base sits on the table plane z = 0.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // wrapped to (-pi, pi]

  Vec2 translation() const { return {x, y}; }
};

// Generator parameter table (all lengths in meters, sampled uniformly):
//   ngon:        3..8 vertices, circumradius [0.012, 0.035],
//                per-vertex radial jitter factor [0.80, 1.00]
//   gear:        6..11 teeth, root radius [0.016, 0.030],
//                tooth depth [0.25, 0.45] x root radius,
//                center hole radius 0.35 x root radius (16-gon);
//                outer vertex count = 4 x teeth
//   lbracket:    arm lengths [0.040, 0.085], arm width [0.014, 0.028],
//                one bolt hole per arm, radius 0.28 x width (12-gon)
//   slotted_bar: length [0.050, 0.120], width [0.016, 0.034],
//                centered stadium slot, length 0.45 x bar length,
//                width 0.38 x bar width (18 vertices)
//   ellipse:     semi-major [0.016, 0.048], semi-minor [0.010, min(a, 0.030)],
//                32 vertices
// Every family additionally draws a uniform rotation phase and a height in
// [0.010, 0.050]. Identical (seed, family) pairs give bit-identical parts.
Part generate_part(std::uint64_t seed, PartFamily family);
Part generate_part(std::uint64_t seed, const std::string& family);

// Signed-area-weighted centroid over a ring set (holes subtract).
// Throws std::invalid_argument on a degenerate (zero-area) set.
Vec2 area_centroid(const std::vector<Ring>& rings, double* area_out = nullptr);

// Minimal axis-aligned rectangle enclosing the posed part (camera frame).
Rect bounding_box(const Part& part, const Pose& pose);

// True iff the world point lies inside the posed outer ring and outside all
// holes; boundary counts as inside.
bool silhouette_contains(const Part& part, const Pose& pose, const Vec2& point);

// All rings of the part transformed into the world frame.
std::vector<Ring> posed_rings(const Part& part, const Pose& pose);

}  // namespace pgrasp
