#include "pgrasp/physics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pgrasp/rng.hpp"

namespace pgrasp {

Grasp sample_grasp(const Rect& bbox, double part_height, std::uint64_t rng_seed) {
  if (!(bbox.width() > 0.0) || !(bbox.height() > 0.0))
    throw std::invalid_argument("degenerate bounding box");
  if (!(part_height > 0.0)) throw std::invalid_argument("part height must be positive");
  Rng rng(rng_seed);
  Grasp g;
  g.gx = rng.uniform(bbox.min.x(), bbox.max.x());
  g.gy = rng.uniform(bbox.min.y(), bbox.max.y());
  g.gz = part_height * std::max(rng.uniform(), 0x1.0p-53);
  g.gtheta = rng.uniform(-0.5 * kPi, 0.5 * kPi);
  return g;
}

namespace {

struct BoundarySample {
  Vec2 point;   // part frame
  Vec2 normal;  // outward material normal, part frame
};

// Discretize all rings at roughly the given spacing. CCW outer ring and CW
// holes both yield (d.y, -d.x) as the normal pointing away from material.
std::vector<BoundarySample> sample_boundary(const Part& part, double spacing) {
  std::vector<BoundarySample> samples;
  auto add_ring = [&](const Ring& ring) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = ring[i];
      const Vec2& b = ring[(i + 1) % n];
      const Vec2 d = b - a;
      const double len = d.norm();
      if (len <= 0.0) continue;
      const Vec2 normal = Vec2(d.y(), -d.x()) / len;
      const int count = std::max(1, static_cast<int>(std::ceil(len / spacing)));
      for (int k = 0; k < count; ++k)
        samples.push_back({a + d * ((k + 0.5) / count), normal});
    }
  };
  add_ring(part.outer_ring);
  for (const Ring& h : part.holes) add_ring(h);
  return samples;
}

struct PadContact {
  bool touching = false;
  double penetration = 0.0;
  Vec2 mean_point = Vec2::Zero();   // world
  Vec2 mean_normal = Vec2::Zero();  // world, material outward
  double torque = 0.0;              // about the object centroid, unit pad force
  bool material_outside_slab = false;  // material beyond the face but off the pad
};

// Depth band below the deepest point that still counts toward the contact
// patch; keeps flat-side contacts symmetric instead of picking one sample.
constexpr double kDepthBand = 2e-4;

PadContact pad_contact(const std::vector<Vec2>& world_points,
                       const std::vector<Vec2>& world_normals, const Vec2& grasp_center,
                       const Vec2& u, const Vec2& v, double side, double half_sep,
                       double half_width, const Vec2& centroid) {
  PadContact c;
  double max_pen = 0.0;
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    const Vec2 rel = world_points[i] - grasp_center;
    const double along = side * rel.dot(u);
    const double lateral = rel.dot(v);
    if (along <= half_sep) continue;
    if (std::abs(lateral) > half_width) {
      c.material_outside_slab = true;
      continue;
    }
    max_pen = std::max(max_pen, along - half_sep);
  }
  if (max_pen <= 0.0) return c;
  c.touching = true;
  c.penetration = max_pen;
  Vec2 point_sum = Vec2::Zero();
  Vec2 normal_sum = Vec2::Zero();
  int count = 0;
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    const Vec2 rel = world_points[i] - grasp_center;
    const double along = side * rel.dot(u);
    if (along <= half_sep || std::abs(rel.dot(v)) > half_width) continue;
    if (along - half_sep < max_pen - kDepthBand) continue;
    point_sum += world_points[i];
    normal_sum += world_normals[i];
    ++count;
  }
  c.mean_point = point_sum / count;
  const double nlen = normal_sum.norm();
  c.mean_normal = nlen > 0.0 ? Vec2(normal_sum / nlen) : Vec2(side * u);
  const Vec2 force = -side * u;  // pad pushes inward
  const Vec2 r = c.mean_point - centroid;
  c.torque = r.x() * force.y() - r.y() * force.x();
  return c;
}

}  // namespace

Displacement displacement_to_grasp_frame(const Pose& pose_before, const Displacement& delta_p,
                                         const WorldGrasp& grasp_world) {
  const Vec2 t0 = pose_before.translation();
  const Vec2 a = rot2(pose_before.theta).transpose() * (grasp_world.position - t0);
  const double alpha = grasp_world.theta - pose_before.theta;
  const double theta_after = pose_before.theta + delta_p.dtheta;
  const Vec2 t1 = t0 + Vec2(delta_p.dx, delta_p.dy);
  const Vec2 a_after = rot2(theta_after).transpose() * (grasp_world.position - t1);
  const double alpha_after = grasp_world.theta - theta_after;
  Displacement dg;
  dg.dx = a_after.x() - a.x();
  dg.dy = a_after.y() - a.y();
  dg.dz = -delta_p.dz;
  dg.dtheta = wrap_angle(alpha_after - alpha);
  return dg;
}

Displacement grasp_frame_to_displacement(const Pose& pose_before, const Displacement& delta_g,
                                         const WorldGrasp& grasp_world) {
  const Vec2 t0 = pose_before.translation();
  const Vec2 a = rot2(pose_before.theta).transpose() * (grasp_world.position - t0);
  const Vec2 a_after = a + Vec2(delta_g.dx, delta_g.dy);
  const double theta_after = pose_before.theta - delta_g.dtheta;
  const Vec2 t1 = grasp_world.position - rot2(theta_after) * a_after;
  Displacement dp;
  dp.dx = t1.x() - t0.x();
  dp.dy = t1.y() - t0.y();
  dp.dz = -delta_g.dz;
  dp.dtheta = wrap_angle(theta_after - pose_before.theta);
  return dp;
}

GraspOutcome simulate_pinch(const Part& part, const Pose& pose, const Grasp& grasp,
                            const PhysicsParams& params,
                            std::vector<double>* separation_trace) {
  GraspOutcome outcome;
  const Pose initial = pose;
  const WorldGrasp world_grasp{pose.translation() + Vec2(grasp.gx, grasp.gy), grasp.gz,
                               grasp.gtheta};

  auto finish = [&](bool success, double margin, int contacts, const Pose& final_pose) {
    outcome.success = success;
    outcome.friction_margin = success ? margin : 0.0;
    outcome.contact_count = contacts;
    Displacement dp;
    dp.dx = final_pose.x - initial.x;
    dp.dy = final_pose.y - initial.y;
    dp.dtheta = wrap_angle(final_pose.theta - initial.theta);
    if (success) {
      const double z_com = 0.5 * part.height;
      dp.dz = (1.0 - margin) *
              std::clamp(z_com - grasp.gz, -0.5 * part.height, 0.5 * part.height);
    }
    outcome.object_displacement = dp;
    outcome.grasp_displacement = displacement_to_grasp_frame(initial, dp, world_grasp);
    return outcome;
  };

  // Jaws descending above the part top never touch it.
  if (grasp.gz >= part.height) return finish(false, 0.0, 0, pose);

  const std::vector<BoundarySample> boundary =
      sample_boundary(part, params.boundary_sample_spacing);
  const Vec2 u(std::cos(grasp.gtheta), std::sin(grasp.gtheta));
  const Vec2 v(-std::sin(grasp.gtheta), std::cos(grasp.gtheta));
  const double cone = std::atan(params.friction_coeff);

  Pose current = pose;
  double separation = params.max_opening;
  bool ever_two_sided = false;

  std::vector<Vec2> world_points(boundary.size());
  std::vector<Vec2> world_normals(boundary.size());
  auto refresh_world = [&]() {
    const Eigen::Matrix2d r = rot2(current.theta);
    const Vec2 t = current.translation();
    for (std::size_t i = 0; i < boundary.size(); ++i) {
      world_points[i] = r * boundary[i].point + t;
      world_normals[i] = r * boundary[i].normal;
    }
  };

  auto contacts_at = [&](double sep, PadContact& plus, PadContact& minus) {
    refresh_world();
    plus = pad_contact(world_points, world_normals, world_grasp.position, u, v, +1.0, 0.5 * sep,
                       0.5 * params.pad_width, current.translation());
    minus = pad_contact(world_points, world_normals, world_grasp.position, u, v, -1.0, 0.5 * sep,
                        0.5 * params.pad_width, current.translation());
  };

  // Jaws that would descend into material cannot start the pinch.
  {
    PadContact plus, minus;
    contacts_at(separation, plus, minus);
    if (plus.touching || minus.touching) return finish(false, 0.0, 0, current);
  }

  for (int step = 0; step < params.max_steps; ++step) {
    separation -= params.closing_step;
    if (separation_trace) separation_trace->push_back(separation);
    if (separation <= 0.0) {
      PadContact plus, minus;
      contacts_at(std::max(separation, 0.0), plus, minus);
      const int contacts = (plus.touching ? 1 : 0) + (minus.touching ? 1 : 0);
      return finish(false, 0.0, contacts, current);
    }

    PadContact plus, minus;
    contacts_at(separation, plus, minus);

    if (plus.touching && minus.touching) {
      ever_two_sided = true;
      const double net_torque = plus.torque + minus.torque;
      const double pen_gap = minus.penetration - plus.penetration;
      if (std::abs(net_torque) <= params.torque_tolerance &&
          std::abs(pen_gap) <= 2.0 * params.closing_step) {
        const double dev_plus = std::acos(std::clamp(plus.mean_normal.dot(u), -1.0, 1.0));
        const double dev_minus = std::acos(std::clamp(minus.mean_normal.dot(-u), -1.0, 1.0));
        const double max_dev = std::max(dev_plus, dev_minus);
        if (max_dev > cone) return finish(false, 0.0, 2, current);  // slips out of the cone
        if (separation <= params.min_separation) return finish(false, 0.0, 2, current);
        const double margin = 1.0 - max_dev / cone;
        return finish(true, margin, 2, current);
      }
      const double shift = std::clamp(0.5 * pen_gap, -params.max_step_translation,
                                      params.max_step_translation);
      current.x += shift * u.x();
      current.y += shift * u.y();
      current.theta = wrap_angle(current.theta +
                                 std::clamp(params.rotation_gain * net_torque,
                                            -params.max_step_rotation,
                                            params.max_step_rotation));
    } else if (plus.touching || minus.touching) {
      const PadContact& c = plus.touching ? plus : minus;
      const double side = plus.touching ? 1.0 : -1.0;
      const double shift =
          -side * std::min(c.penetration, params.max_step_translation);
      current.x += shift * u.x();
      current.y += shift * u.y();
      current.theta = wrap_angle(current.theta +
                                 std::clamp(params.rotation_gain * c.torque,
                                            -params.max_step_rotation,
                                            params.max_step_rotation));
      if (ever_two_sided) {
        // The other pad lost contact while material sits off the pad: the
        // part is being squeezed out sideways.
        const PadContact& other = plus.touching ? minus : plus;
        if (other.material_outside_slab) return finish(false, 0.0, 1, current);
      }
    } else if (ever_two_sided) {
      return finish(false, 0.0, 0, current);
    }
  }
  throw SimulationDivergence("pinch stepper exceeded max_steps");
}

}  // namespace pgrasp
