#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pgrasp/dataset.hpp"
#include "pgrasp/tensor.hpp"

namespace pgrasp {

enum class GdnVariant { kOcfiM, kOcfiMV, kGcipM, kGcipMV };

GdnVariant gdn_variant_from_string(const std::string& name);
std::string to_string(GdnVariant v);
bool variant_uses_patch(GdnVariant v);    // GCIP variants
bool variant_has_variance(GdnVariant v);  // M+V variants

// ---------------------------------------------------------------------------
// Input/target scaling.

// Affine map of action components into [-1, 1]: translations against the
// half-window, gz against the height bound, gtheta against pi/2. Out-of-range
// inputs are clipped and counted.
struct ActionScaler {
  double translation_half = 0.075;
  double height_bound = 0.08;
  mutable long clip_count = 0;

  Eigen::Vector4d scale4(const Grasp& g) const;  // (gx, gy, gz, gtheta)
  Eigen::Vector3d scale3(const Grasp& g) const;  // (gx, gy, gz)
  Grasp unscale4(const Eigen::Vector4d& v) const;
};

// Targets: translations divided by 0.05 m, rotation by pi/2. Variances
// unscale by the squared factors.
struct TargetScaler {
  double translation_scale = 0.05;

  Eigen::Vector4d scale(const Displacement& dg) const;
  Displacement unscale_mean(const Eigen::Vector4d& mu) const;
  Eigen::Vector4d unscale_variance(const Eigen::Vector4d& var) const;
};

// ---------------------------------------------------------------------------
// GQN

struct GqnModel {
  TwoBranchNet net;
  ActionScaler action_scaler;

  explicit GqnModel(std::uint64_t seed);

  // Raw (physical) patch + grasp; standardization and scaling happen here.
  double predict(const Image& patch, const Grasp& grasp);
  Eigen::VectorXd predict_batch(const std::vector<const Image*>& patches,
                                const std::vector<Grasp>& grasps);
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-5;
  double lr_decay = 1e-6;
  std::uint64_t seed = 1;
  int max_samples = 0;  // 0 = no cap; otherwise seeded subsample of the data
};

struct EpochMetric {
  int epoch = 0;
  double loss = 0.0;
  double train_metric = 0.0;  // accuracy for GQN, mean RMSE for GDN
  double val_metric = 0.0;
};

struct GqnTrainResult {
  GqnModel model;
  std::vector<EpochMetric> history;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

// Expects balanced data (see dataset::balance_for_gqn). Deterministic per
// config.seed.
GqnTrainResult train_gqn(const std::vector<GraspRecord>& train,
                         const std::vector<GraspRecord>& val, const TrainConfig& config);

// ---------------------------------------------------------------------------
// GDN

struct GdnPrediction {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();      // physical units
  Eigen::Vector4d variance = Eigen::Vector4d::Ones();  // physical units^2
  bool has_variance = false;
};

struct GdnModel {
  GdnVariant variant;
  TwoBranchNet net;
  ActionScaler action_scaler;
  TargetScaler target_scaler;

  GdnModel(GdnVariant variant, std::uint64_t seed);

  // obs is the GCIP patch or the OCFI full image depending on the variant.
  GdnPrediction predict(const Image& obs, const Grasp& grasp);
  std::vector<GdnPrediction> predict_batch(const std::vector<const Image*>& obs,
                                           const std::vector<Grasp>& grasps);
};

// GCIP variants copy the GQN's convolution filters bit-exactly (no weight
// sharing afterwards); OCFI variants stay randomly initialized. Throws
// ShapeError if the convolution stacks disagree.
GdnModel init_gdn_from_gqn(GqnModel& gqn, GdnVariant variant, std::uint64_t seed);

struct GdnTrainResult {
  GdnModel model;
  std::vector<EpochMetric> history;
  Eigen::Vector4d val_rmse = Eigen::Vector4d::Zero();  // per-dim, physical units
};

// Trains on successful records only (caller filters); M variants use a fixed
// unit variance, which reduces the likelihood loss to squared error.
GdnTrainResult train_gdn(const std::vector<GraspRecord>& train_successes,
                         const std::vector<GraspRecord>& val_successes, GdnVariant variant,
                         const TrainConfig& config, GqnModel* init_from = nullptr);

// ---------------------------------------------------------------------------
// LOWESS baseline: kernel-weighted average of stored grasp displacements for
// known objects. Kernel covariance diag([0.02, 0.02, 0.05, 1.00]) in SI units
// (m, m, m, rad). Closed form, no training.

struct UnknownObjectError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class LowessModel {
 public:
  static constexpr double kKernelDiag[4] = {0.02, 0.02, 0.05, 1.00};

  void add(std::uint64_t part_id, const Grasp& grasp, const Displacement& dg);
  static LowessModel from_records(const std::vector<GraspRecord>& records);

  // Kernel-weighted average; angular kernel distance wrapped to (-pi, pi].
  // Falls back to the nearest stored grasp if all weights underflow.
  Eigen::Vector4d predict(std::uint64_t part_id, const Grasp& query) const;

  bool knows(std::uint64_t part_id) const { return memory_.count(part_id) > 0; }

 private:
  struct Entry {
    Eigen::Vector4d grasp;
    Eigen::Vector4d dg;
  };
  std::map<std::uint64_t, std::vector<Entry>> memory_;
};

}  // namespace pgrasp
