#pragma once

#include <functional>
#include <memory>
#include <string>

#include "pgrasp/models.hpp"

namespace pgrasp {

// Everything the planner needs to observe and sample a single resting part:
// the clean full view, an anchored height field for patch rendering, and the
// grasp sampling box (relative to the object center).
struct Scene {
  Part part;
  Pose pose;
  Rect grasp_bbox;
  Image full = Image::Zero();
  std::shared_ptr<const HeightField> field;
  double patch_window = 0.15;
  double camera_height = 0.70;
  double noise_sigma = 0.0;  // observation noise applied to planner images
};

Scene make_scene(const Part& part, const Pose& pose, double full_window = 0.30,
                 double patch_window = 0.15, double camera_height = 0.70,
                 double noise_sigma = 0.0);

struct PlanResult {
  Grasp grasp;
  double quality = 0.0;
  Displacement mu;
  Eigen::Vector4d sigma2 = Eigen::Vector4d::Zero();
  bool has_variance = false;
  long candidate_count = 0;
  long pool_size = 0;
  long chosen_index = 0;  // position in the candidate stream

  // Single-line key=value record for harness reports.
  std::string report_line() const;
};

// Batched scoring interfaces so tests can substitute stub models.
using QualityFn = std::function<Eigen::VectorXd(const std::vector<const Image*>& patches,
                                                const std::vector<Grasp>& grasps)>;
using VarianceFn = std::function<std::vector<GdnPrediction>(
    const std::vector<const Image*>& obs, const std::vector<Grasp>& grasps)>;

// Samples n candidates with physics::sample_grasp (candidate k's seed is
// hash_seed(seed, k + 1)) and returns the argmax-quality grasp; ties break
// toward the lowest candidate index.
PlanResult plan_quality_only(const Scene& scene, const QualityFn& quality, int n,
                             std::uint64_t seed);
PlanResult plan_quality_only(const Scene& scene, GqnModel& gqn, int n = 3200,
                             std::uint64_t seed = 1);

// Quality pool = top ceil(top_fraction * n) by score (stable: descending
// score, ascending index); the chosen grasp minimizes the scalarized
// variance V = var_x + var_y + var_z + (lambda * sigma_theta)^2 where lambda
// is half the scene bounding-box diagonal. variance() must supply variances
// (GDN M+V); the model overload throws std::invalid_argument otherwise.
PlanResult plan_precise(const Scene& scene, const QualityFn& quality,
                        const VarianceFn& variance, int n, double top_fraction,
                        std::uint64_t seed);
PlanResult plan_precise(const Scene& scene, GqnModel& gqn, GdnModel& gdn_mv, int n = 3200,
                        double top_fraction = 0.03, std::uint64_t seed = 1);

// Pool size rule used by plan_precise, exposed for the harness and tests.
long quality_pool_size(long candidate_count, double top_fraction);

// Treats the predicted in-hand displacement as a local pose delta: releasing
// at commanded pose C lands the object at C * mu, so C = target * mu^-1. The
// dz component is a release-height offset handled by the caller.
Pose correct_placement(const Pose& target, const Displacement& mu);

// The placement model inverted by correct_placement: the landing pose of an
// object released at `commanded` with true in-hand displacement `mu`.
Pose apply_displacement(const Pose& commanded, const Displacement& mu);

}  // namespace pgrasp
