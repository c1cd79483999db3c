#pragma once

#include <cstdint>
#include <stdexcept>

#include "pgrasp/parts.hpp"

namespace pgrasp {

// 4-DoF top-down pinch. (gx, gy) is the grasp center relative to the
// object's geometric center, expressed in the camera/world-aligned frame at
// sampling time; gz is the jaw height above the table; gtheta is the world
// angle of the closing axis, wrapped to [-pi/2, pi/2).
struct Grasp {
  double gx = 0.0;
  double gy = 0.0;
  double gz = 0.0;
  double gtheta = 0.0;
};

struct Displacement {
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
  double dtheta = 0.0;  // wrapped to (-pi, pi]

  Eigen::Vector4d vec() const { return {dx, dy, dz, dtheta}; }
  static Displacement from_vec(const Eigen::Vector4d& v) {
    return {v[0], v[1], v[2], wrap_angle(v[3])};
  }
};

struct GraspOutcome {
  bool success = false;
  Displacement object_displacement;  // delta-p, world frame
  Displacement grasp_displacement;   // delta-g, object frame; meaningful only on success
  double friction_margin = 0.0;      // in [0, 1]
  int contact_count = 0;
};

struct PhysicsParams {
  double pad_width = 0.02;        // jaw pad extent perpendicular to the closing axis
  double max_opening = 0.08;      // initial jaw separation
  double closing_step = 0.0005;   // separation decrement per step
  double friction_coeff = 0.5;    // friction cone half-angle = atan(friction_coeff)
  double rotation_gain = 0.6;     // rad per unit contact torque, per resolve pass
  double torque_tolerance = 1e-3; // |net torque| below this counts as equilibrium
  double max_step_rotation = 0.02;   // rotation cap per resolve pass, rad
  double max_step_translation = 0.002;  // translation cap per resolve pass, m
  double min_separation = 0.001;  // success requires remaining opening above this
  double boundary_sample_spacing = 0.001;  // boundary discretization, m
  int max_steps = 2000;
};

struct SimulationDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Uniform grasp over the given axis-aligned box (coordinates relative to the
// object center), gz over (0, part_height), gtheta over [-pi/2, pi/2).
Grasp sample_grasp(const Rect& bbox, double part_height, std::uint64_t rng_seed);

// Deterministic quasi-static pinch stepper. Throws SimulationDivergence if
// the stepper fails to terminate within params.max_steps. separation_trace,
// when given, records the jaw separation after every closing step.
GraspOutcome simulate_pinch(const Part& part, const Pose& pose, const Grasp& grasp,
                            const PhysicsParams& params,
                            std::vector<double>* separation_trace = nullptr);

// World grasp pose used by the frame conversions below.
struct WorldGrasp {
  Vec2 position = Vec2::Zero();
  double z = 0.0;
  double theta = 0.0;
};

// Object-frame grasp displacement: with a = R(theta)^T (G - p) before the
// object moves by delta_p (gripper fixed in world), returns (a' - a, a'_z -
// a_z, wrap(alpha' - alpha)).
Displacement displacement_to_grasp_frame(const Pose& pose_before, const Displacement& delta_p,
                                         const WorldGrasp& grasp_world);

// Inverse direction: object displacement delta_p that produces the given
// grasp-frame displacement.
Displacement grasp_frame_to_displacement(const Pose& pose_before, const Displacement& delta_g,
                                         const WorldGrasp& grasp_world);

}  // namespace pgrasp
