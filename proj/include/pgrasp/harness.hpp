#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pgrasp/planner.hpp"

namespace pgrasp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat run configuration. Every field has a default; parse_config rejects
// unknown keys. Key names are the dotted forms in default_config_text().
struct Config {
  // corpus generation / collection
  int num_parts = 80;
  int grasps_per_part = 1000;
  std::uint64_t seed = 1;
  double val_fraction = 0.2;
  int workers = 1;
  double pose_jitter = 0.02;
  // sensing
  double full_window = 0.30;
  double patch_window = 0.15;
  double camera_height = 0.70;
  double noise_sigma = 0.003;
  // physics
  PhysicsParams physics;
  // training
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-5;
  double lr_decay = 1e-6;
  int max_samples = 0;
  // planning / experiments
  int plan_n = 3200;
  double top_fraction = 0.03;
  int trials_per_object = 30;
  // output
  std::string out_dir = "out";
};

Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string default_config_text();  // documented defaults, `key = value` lines

// ---------------------------------------------------------------------------
// Metrics

// (translational RMSE in cm over the 3D error vector, rotational RMSE in
// degrees with wrapped angle errors). Throws on empty or mismatched input.
std::pair<double, double> rmse_metrics(const std::vector<Eigen::Vector4d>& predictions,
                                       const std::vector<Eigen::Vector4d>& ground_truth);

// ---------------------------------------------------------------------------
// Experiments

// A named displacement predictor evaluated per successful trial.
using DisplacementFn = std::function<Eigen::Vector4d(
    std::uint64_t part_id, const Image& full, const Image& patch, const Grasp& grasp)>;
struct NamedPredictor {
  std::string name;
  DisplacementFn predict;
};

NamedPredictor make_predictor(const std::string& name, GdnModel& model);
NamedPredictor make_predictor(const std::string& name, const LowessModel& model);

struct TrialRow {
  std::uint64_t part_id = 0;
  int trial = 0;
  Pose pose;
  Grasp grasp;
  double quality = 0.0;
  long pool_size = 0;
  bool success = false;
  Eigen::Vector4d true_dg = Eigen::Vector4d::Zero();        // valid on success
  std::vector<Eigen::Vector4d> predictions;                 // parallel to model names
};

struct ModelMetrics {
  std::string model;
  double trans_rmse_cm = 0.0;
  double rot_rmse_deg = 0.0;
  long count = 0;
};

struct ObjectMetrics {
  std::uint64_t part_id = 0;
  long trials = 0;
  long successes = 0;
  std::vector<ModelMetrics> models;
};

struct EvalReport {
  std::vector<std::string> model_names;
  std::vector<TrialRow> rows;  // raw trial log, corpus order then trial order
  long trials = 0;
  long successes = 0;
  double success_rate = 0.0;
  std::vector<ModelMetrics> totals;       // over all successful trials
  std::vector<ObjectMetrics> per_object;  // corpus order

  std::string csv() const;      // raw log, fixed header row
  std::string summary() const;  // flat text totals
};

// Aggregates totals/per-object metrics from the raw rows; csv() round-trips
// through this so reports are recomputable from the trial log.
EvalReport compute_report(const std::vector<std::string>& model_names,
                          std::vector<TrialRow> rows);
EvalReport report_from_csv(const std::string& csv_text);

struct ExperimentConfig {
  int trials_per_object = 30;
  int plan_n = 3200;
  double top_fraction = 0.03;
  std::uint64_t seed = 1;
  double full_window = 0.30;
  double patch_window = 0.15;
  double camera_height = 0.70;
  double noise_sigma = 0.003;
  double pose_jitter = 0.02;
  int workers = 1;
  PhysicsParams physics;
};

// Experiment (1): per trial, jitter the resting pose, plan by quality only,
// simulate, and evaluate every displacement predictor on successes.
EvalReport run_experiment_quality(const std::vector<Part>& parts, GqnModel& gqn,
                                  const std::vector<NamedPredictor>& models,
                                  const ExperimentConfig& config);

// Experiment (2): as above but planning with plan_precise using planner_gdn.
// Throws std::invalid_argument if planner_gdn is a mean-only variant.
EvalReport run_experiment_precise(const std::vector<Part>& parts, GqnModel& gqn,
                                  GdnModel& planner_gdn,
                                  const std::vector<NamedPredictor>& models,
                                  const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// CLI entry point (subcommands gen-parts, collect, filter, split, train-gqn,
// train-gdn, eval-exp1, eval-exp2, plan, gradcheck). Returns the process exit
// status; usage errors return 2.
int cli(int argc, const char* const* argv);

}  // namespace pgrasp
