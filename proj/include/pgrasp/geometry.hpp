#pragma once

#include <Eigen/Dense>
#include <vector>

namespace pgrasp {

using Vec2 = Eigen::Vector2d;
using Ring = std::vector<Vec2>;  // polygon ring, no repeated closing vertex

constexpr double kPi = 3.14159265358979323846;

// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

inline Eigen::Matrix2d rot2(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

// Shoelace signed area; positive for counter-clockwise rings.
double signed_area(const Ring& ring);

// Area-weighted centroid of a single ring (sign follows orientation).
// Returns the centroid and writes the signed area to *area_out if non-null.
Vec2 ring_centroid(const Ring& ring, double* area_out = nullptr);

struct Rect {
  Vec2 min{0.0, 0.0};
  Vec2 max{0.0, 0.0};
  double width() const { return max.x() - min.x(); }
  double height() const { return max.y() - min.y(); }
  double diagonal() const { return (max - min).norm(); }
  bool contains(const Vec2& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
  }
};

Rect bbox_of(const Ring& ring);

// Even-odd crossing test. Points within boundary_eps of an edge count as
// inside (boundary-inclusive by contract).
bool point_in_ring(const Ring& ring, const Vec2& p, double boundary_eps = 1e-12);

// Distance from point to a polygon boundary.
double distance_to_ring(const Ring& ring, const Vec2& p);

}  // namespace pgrasp
