#include "pgrasp/parts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pgrasp/rng.hpp"

namespace pgrasp {

double signed_area(const Ring& ring) {
  double a = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = ring[i];
    const Vec2& q = ring[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

Vec2 ring_centroid(const Ring& ring, double* area_out) {
  double a = 0.0;
  Vec2 c = Vec2::Zero();
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = ring[i];
    const Vec2& q = ring[(i + 1) % n];
    const double cross = p.x() * q.y() - q.x() * p.y();
    a += cross;
    c += (p + q) * cross;
  }
  a *= 0.5;
  if (area_out) *area_out = a;
  if (std::abs(a) < 1e-300) return Vec2::Zero();
  return c / (6.0 * a);
}

Rect bbox_of(const Ring& ring) {
  Rect r;
  r.min = Vec2(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  r.max = -r.min;
  for (const Vec2& p : ring) {
    r.min = r.min.cwiseMin(p);
    r.max = r.max.cwiseMax(p);
  }
  return r;
}

double distance_to_ring(const Ring& ring, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[(i + 1) % n];
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, (p - (a + t * ab)).norm());
  }
  return best;
}

bool point_in_ring(const Ring& ring, const Vec2& p, double boundary_eps) {
  if (distance_to_ring(ring, p) <= boundary_eps) return true;
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = a.x() + (p.y() - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

PartFamily part_family_from_string(const std::string& name) {
  if (name == "ngon") return PartFamily::kNgon;
  if (name == "gear") return PartFamily::kGear;
  if (name == "lbracket") return PartFamily::kLBracket;
  if (name == "slotted_bar") return PartFamily::kSlottedBar;
  if (name == "ellipse") return PartFamily::kEllipse;
  throw std::invalid_argument("unknown part family: " + name);
}

std::string to_string(PartFamily family) {
  switch (family) {
    case PartFamily::kNgon: return "ngon";
    case PartFamily::kGear: return "gear";
    case PartFamily::kLBracket: return "lbracket";
    case PartFamily::kSlottedBar: return "slotted_bar";
    case PartFamily::kEllipse: return "ellipse";
  }
  throw std::invalid_argument("unknown part family enum");
}

Vec2 area_centroid(const std::vector<Ring>& rings, double* area_out) {
  double total_area = 0.0;
  Vec2 weighted = Vec2::Zero();
  for (const Ring& ring : rings) {
    if (ring.size() < 3) throw std::invalid_argument("ring with fewer than 3 vertices");
    double a = 0.0;
    const Vec2 c = ring_centroid(ring, &a);
    total_area += a;
    weighted += a * c;
  }
  if (total_area <= 1e-12) throw std::invalid_argument("degenerate polygon: non-positive area");
  if (area_out) *area_out = total_area;
  return weighted / total_area;
}

namespace {

Ring make_regular(int n, double radius, double phase) {
  Ring ring;
  ring.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2.0 * kPi * i / n;
    ring.emplace_back(radius * std::cos(a), radius * std::sin(a));
  }
  return ring;
}

Ring reversed(Ring ring) {
  std::reverse(ring.begin(), ring.end());
  return ring;
}

void rotate_all(std::vector<Ring>& rings, double phase) {
  const Eigen::Matrix2d r = rot2(phase);
  for (Ring& ring : rings)
    for (Vec2& v : ring) v = r * v;
}

// Shift every vertex so the composite area centroid lands on the origin.
void center_rings(std::vector<Ring>& rings) {
  const Vec2 c = area_centroid(rings);
  for (Ring& ring : rings)
    for (Vec2& v : ring) v -= c;
}

std::vector<Ring> build_ngon(Rng& rng) {
  const int n = 3 + static_cast<int>(rng.uniform_index(6));
  const double radius = rng.uniform(0.012, 0.035);
  Ring ring;
  ring.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * kPi * i / n;
    const double r = radius * rng.uniform(0.80, 1.00);
    ring.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  return {ring};
}

std::vector<Ring> build_gear(Rng& rng) {
  const int teeth = 6 + static_cast<int>(rng.uniform_index(6));
  const double root = rng.uniform(0.016, 0.030);
  const double tip = root * (1.0 + rng.uniform(0.25, 0.45));
  Ring ring;
  ring.reserve(4 * teeth);
  // Four vertices per tooth: root edge start, tip edge start/end, root edge end.
  for (int t = 0; t < teeth; ++t) {
    const double a0 = 2.0 * kPi * t / teeth;
    const double pitch = 2.0 * kPi / teeth;
    const double angles[4] = {a0, a0 + 0.25 * pitch, a0 + 0.50 * pitch, a0 + 0.75 * pitch};
    const double radii[4] = {root, tip, tip, root};
    for (int k = 0; k < 4; ++k)
      ring.emplace_back(radii[k] * std::cos(angles[k]), radii[k] * std::sin(angles[k]));
  }
  Ring hole = reversed(make_regular(16, 0.35 * root, 0.0));
  return {ring, hole};
}

std::vector<Ring> build_lbracket(Rng& rng) {
  const double l1 = rng.uniform(0.040, 0.085);
  const double l2 = rng.uniform(0.040, 0.085);
  const double w = rng.uniform(0.014, 0.028);
  Ring outer = {{0.0, 0.0}, {l1, 0.0}, {l1, w}, {w, w}, {w, l2}, {0.0, l2}};
  const double hr = 0.28 * w;
  Ring hole_a = reversed(make_regular(12, hr, 0.0));
  Ring hole_b = hole_a;
  const Vec2 ca(l1 - 0.5 * w, 0.5 * w);
  const Vec2 cb(0.5 * w, l2 - 0.5 * w);
  for (Vec2& v : hole_a) v += ca;
  for (Vec2& v : hole_b) v += cb;
  return {outer, hole_a, hole_b};
}

std::vector<Ring> build_slotted_bar(Rng& rng) {
  const double length = rng.uniform(0.050, 0.120);
  const double width = rng.uniform(0.016, 0.034);
  Ring outer = {{-0.5 * length, -0.5 * width},
                {0.5 * length, -0.5 * width},
                {0.5 * length, 0.5 * width},
                {-0.5 * length, 0.5 * width}};
  // Stadium slot: two 8-segment semicircle caps joined by straight sides.
  const double slot_half = 0.5 * 0.45 * length;
  const double r = 0.5 * 0.38 * width;
  Ring slot;
  for (int i = 0; i <= 8; ++i) {
    const double a = -0.5 * kPi + kPi * i / 8.0;
    slot.emplace_back(slot_half - r + r * std::cos(a), r * std::sin(a));
  }
  for (int i = 1; i <= 8; ++i) {
    const double a = 0.5 * kPi + kPi * i / 8.0;
    slot.emplace_back(-(slot_half - r) + r * std::cos(a), r * std::sin(a));
  }
  return {outer, reversed(slot)};
}

std::vector<Ring> build_ellipse(Rng& rng) {
  const double a = rng.uniform(0.016, 0.048);
  const double b = rng.uniform(0.010, std::min(a, 0.030));
  Ring ring;
  ring.reserve(32);
  for (int i = 0; i < 32; ++i) {
    const double t = 2.0 * kPi * i / 32.0;
    ring.emplace_back(a * std::cos(t), b * std::sin(t));
  }
  return {ring};
}

}  // namespace

Part generate_part(std::uint64_t seed, PartFamily family) {
  Rng rng(hash_seed(seed, static_cast<std::uint64_t>(family) + 101));
  std::vector<Ring> rings;
  switch (family) {
    case PartFamily::kNgon: rings = build_ngon(rng); break;
    case PartFamily::kGear: rings = build_gear(rng); break;
    case PartFamily::kLBracket: rings = build_lbracket(rng); break;
    case PartFamily::kSlottedBar: rings = build_slotted_bar(rng); break;
    case PartFamily::kEllipse: rings = build_ellipse(rng); break;
  }
  rotate_all(rings, rng.uniform(0.0, 2.0 * kPi));
  center_rings(rings);

  Part part;
  part.outer_ring = rings.front();
  part.holes.assign(rings.begin() + 1, rings.end());
  part.height = rng.uniform(0.010, 0.050);
  part.part_id = seed;
  part.family = family;

  const double diag = bbox_of(part.outer_ring).diagonal();
  if (diag < 0.01 || diag > 0.20)
    throw std::logic_error("generated part violates the size invariant");
  return part;
}

Part generate_part(std::uint64_t seed, const std::string& family) {
  return generate_part(seed, part_family_from_string(family));
}

std::vector<Ring> posed_rings(const Part& part, const Pose& pose) {
  std::vector<Ring> rings;
  rings.reserve(1 + part.holes.size());
  const Eigen::Matrix2d r = rot2(pose.theta);
  const Vec2 t = pose.translation();
  auto transform = [&](const Ring& ring) {
    Ring out;
    out.reserve(ring.size());
    for (const Vec2& v : ring) out.push_back(r * v + t);
    return out;
  };
  rings.push_back(transform(part.outer_ring));
  for (const Ring& h : part.holes) rings.push_back(transform(h));
  return rings;
}

Rect bounding_box(const Part& part, const Pose& pose) {
  const Eigen::Matrix2d r = rot2(pose.theta);
  const Vec2 t = pose.translation();
  Rect box;
  box.min = Vec2(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  box.max = -box.min;
  for (const Vec2& v : part.outer_ring) {
    const Vec2 w = r * v + t;
    box.min = box.min.cwiseMin(w);
    box.max = box.max.cwiseMax(w);
  }
  return box;
}

bool silhouette_contains(const Part& part, const Pose& pose, const Vec2& point) {
  // Transform the query into the part frame instead of transforming rings.
  const Eigen::Matrix2d rt = rot2(pose.theta).transpose();
  const Vec2 local = rt * (point - pose.translation());
  if (!point_in_ring(part.outer_ring, local)) return false;
  for (const Ring& hole : part.holes) {
    // Hole boundary still counts as part material.
    if (point_in_ring(hole, local) && distance_to_ring(hole, local) > 1e-12) return false;
  }
  return true;
}

}  // namespace pgrasp
