#include "pgrasp/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pgrasp/rng.hpp"

namespace pgrasp {

Scene make_scene(const Part& part, const Pose& pose, double full_window, double patch_window,
                 double camera_height, double noise_sigma) {
  Scene scene;
  scene.part = part;
  scene.pose = pose;
  scene.patch_window = patch_window;
  scene.camera_height = camera_height;
  scene.noise_sigma = noise_sigma;

  const Rect bbox_world = bounding_box(part, pose);
  scene.grasp_bbox.min = bbox_world.min - pose.translation();
  scene.grasp_bbox.max = bbox_world.max - pose.translation();

  scene.full = render_full(part, pose, full_window, camera_height).pixels;

  Rect cover = bbox_world;
  const double reach = patch_window * 0.75;
  const Vec2 pad(scene.grasp_bbox.width() * 0.5 + reach,
                 scene.grasp_bbox.height() * 0.5 + reach);
  cover.min -= pad;
  cover.max += pad;
  scene.field = std::make_shared<HeightField>(part, pose, cover);
  return scene;
}

long quality_pool_size(long candidate_count, double top_fraction) {
  // Shave one ulp-scale epsilon so exact products (0.03 * 3200) are not
  // pushed over the next integer by rounding.
  const double raw = top_fraction * static_cast<double>(candidate_count);
  long size = static_cast<long>(std::ceil(raw * (1.0 - 1e-12)));
  return std::clamp(size, 1L, candidate_count);
}

namespace {

struct Candidates {
  std::vector<Grasp> grasps;
  std::vector<Image> patches;       // observation images, owned
  std::vector<const Image*> views;  // pointers into `patches`
};

Candidates sample_candidates(const Scene& scene, int n, std::uint64_t seed) {
  Candidates c;
  c.grasps.reserve(n);
  c.patches.reserve(n);
  const std::uint64_t noise_root = hash_seed(seed, 7);
  for (int k = 0; k < n; ++k) {
    const Grasp g =
        sample_grasp(scene.grasp_bbox, scene.part.height, hash_seed(seed, k + 1));
    DepthImage patch = render_grasp_patch(
        *scene.field, scene.part.height, scene.pose.translation() + Vec2(g.gx, g.gy),
        g.gtheta, scene.patch_window, scene.camera_height);
    if (scene.noise_sigma > 0.0)
      patch = add_noise(patch, scene.noise_sigma, hash_seed(noise_root, k + 1));
    c.grasps.push_back(g);
    c.patches.push_back(quantize_image(patch.pixels));
  }
  c.views.reserve(n);
  for (const Image& img : c.patches) c.views.push_back(&img);
  return c;
}

long argmax_index(const Eigen::VectorXd& scores) {
  long best = 0;
  for (long i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace

PlanResult plan_quality_only(const Scene& scene, const QualityFn& quality, int n,
                             std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("plan_quality_only: n must be positive");
  const Candidates c = sample_candidates(scene, n, seed);
  const Eigen::VectorXd scores = quality(c.views, c.grasps);

  PlanResult result;
  result.candidate_count = n;
  result.pool_size = 1;
  result.chosen_index = argmax_index(scores);
  result.grasp = c.grasps[result.chosen_index];
  result.quality = scores[result.chosen_index];
  return result;
}

PlanResult plan_quality_only(const Scene& scene, GqnModel& gqn, int n, std::uint64_t seed) {
  return plan_quality_only(
      scene,
      [&gqn](const std::vector<const Image*>& patches, const std::vector<Grasp>& grasps) {
        return gqn.predict_batch(patches, grasps);
      },
      n, seed);
}

PlanResult plan_precise(const Scene& scene, const QualityFn& quality,
                        const VarianceFn& variance, int n, double top_fraction,
                        std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("plan_precise: n must be positive");
  const Candidates c = sample_candidates(scene, n, seed);
  const Eigen::VectorXd scores = quality(c.views, c.grasps);

  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](long a, long b) { return scores[a] > scores[b]; });
  const long pool = quality_pool_size(n, top_fraction);
  order.resize(pool);

  std::vector<const Image*> pool_views;
  std::vector<Grasp> pool_grasps;
  pool_views.reserve(pool);
  pool_grasps.reserve(pool);
  for (long idx : order) {
    pool_views.push_back(c.views[idx]);
    pool_grasps.push_back(c.grasps[idx]);
  }
  const std::vector<GdnPrediction> preds = variance(pool_views, pool_grasps);
  if (preds.size() != static_cast<std::size_t>(pool))
    throw ShapeError("plan_precise: variance callback returned wrong count");

  const double lambda = bounding_box(scene.part, scene.pose).diagonal() * 0.5;
  long best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (long i = 0; i < pool; ++i) {
    if (!preds[i].has_variance)
      throw std::invalid_argument("plan_precise: predictions carry no variance");
    const Eigen::Vector4d& s2 = preds[i].variance;
    const double v = s2[0] + s2[1] + s2[2] + lambda * lambda * s2[3];
    // Candidate-index tie-break: the pool is score-ordered, so compare the
    // original indices explicitly.
    if (v < best_v || (v == best_v && order[i] < order[best])) {
      best_v = v;
      best = i;
    }
  }

  PlanResult result;
  result.candidate_count = n;
  result.pool_size = pool;
  result.chosen_index = order[best];
  result.grasp = c.grasps[result.chosen_index];
  result.quality = scores[result.chosen_index];
  result.mu = Displacement::from_vec(preds[best].mean);
  result.sigma2 = preds[best].variance;
  result.has_variance = true;
  return result;
}

PlanResult plan_precise(const Scene& scene, GqnModel& gqn, GdnModel& gdn_mv, int n,
                        double top_fraction, std::uint64_t seed) {
  if (!variant_has_variance(gdn_mv.variant))
    throw std::invalid_argument("plan_precise: GDN must be an M+V variant");
  const bool patch_obs = variant_uses_patch(gdn_mv.variant);
  const Image full_obs =
      scene.noise_sigma > 0.0
          ? quantize_image(add_noise({scene.full, 0.0, scene.pose.translation(), 0.0},
                                     scene.noise_sigma, hash_seed(seed, 8))
                               .pixels)
          : quantize_image(scene.full);
  return plan_precise(
      scene,
      [&gqn](const std::vector<const Image*>& patches, const std::vector<Grasp>& grasps) {
        return gqn.predict_batch(patches, grasps);
      },
      [&](const std::vector<const Image*>& obs, const std::vector<Grasp>& grasps) {
        if (patch_obs) return gdn_mv.predict_batch(obs, grasps);
        const std::vector<const Image*> fulls(obs.size(), &full_obs);
        return gdn_mv.predict_batch(fulls, grasps);
      },
      n, top_fraction, seed);
}

std::string PlanResult::report_line() const {
  std::ostringstream os;
  os.precision(17);
  os << "gx=" << grasp.gx << " gy=" << grasp.gy << " gz=" << grasp.gz
     << " gtheta=" << grasp.gtheta << " quality=" << quality << " mu_x=" << mu.dx
     << " mu_y=" << mu.dy << " mu_z=" << mu.dz << " mu_theta=" << mu.dtheta
     << " var_x=" << sigma2[0] << " var_y=" << sigma2[1] << " var_z=" << sigma2[2]
     << " var_theta=" << sigma2[3] << " candidates=" << candidate_count
     << " pool=" << pool_size << " index=" << chosen_index;
  return os.str();
}

Pose apply_displacement(const Pose& commanded, const Displacement& mu) {
  const Eigen::Rotation2Dd r(commanded.theta);
  const Vec2 p = commanded.translation() + r * Vec2(mu.dx, mu.dy);
  return {p.x(), p.y(), wrap_angle(commanded.theta + mu.dtheta)};
}

Pose correct_placement(const Pose& target, const Displacement& mu) {
  // target = commanded * mu  =>  commanded = target * mu^-1.
  const double theta = wrap_angle(target.theta - mu.dtheta);
  const Eigen::Rotation2Dd r(theta);
  const Vec2 p = target.translation() - r * Vec2(mu.dx, mu.dy);
  return {p.x(), p.y(), theta};
}

}  // namespace pgrasp
