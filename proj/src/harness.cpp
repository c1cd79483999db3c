#include "pgrasp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "pgrasp/rng.hpp"

namespace pgrasp {

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has a non-numeric value: " + value);
  }
  if (pos != value.size())
    throw ConfigError("config key '" + key + "' has a non-numeric value: " + value);
  return v;
}

long parse_int(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  if (v != std::floor(v))
    throw ConfigError("config key '" + key + "' expects an integer, got: " + value);
  return static_cast<long>(v);
}

}  // namespace

Config parse_config(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line is not key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "corpus.num_parts") c.num_parts = static_cast<int>(parse_int(key, value));
    else if (key == "corpus.grasps_per_part") c.grasps_per_part = static_cast<int>(parse_int(key, value));
    else if (key == "corpus.seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "corpus.val_fraction") c.val_fraction = parse_double(key, value);
    else if (key == "corpus.workers") c.workers = static_cast<int>(parse_int(key, value));
    else if (key == "corpus.pose_jitter") c.pose_jitter = parse_double(key, value);
    else if (key == "sensor.full_window") c.full_window = parse_double(key, value);
    else if (key == "sensor.patch_window") c.patch_window = parse_double(key, value);
    else if (key == "sensor.camera_height") c.camera_height = parse_double(key, value);
    else if (key == "sensor.noise_sigma") c.noise_sigma = parse_double(key, value);
    else if (key == "physics.pad_width") c.physics.pad_width = parse_double(key, value);
    else if (key == "physics.max_opening") c.physics.max_opening = parse_double(key, value);
    else if (key == "physics.closing_step") c.physics.closing_step = parse_double(key, value);
    else if (key == "physics.friction_coeff") c.physics.friction_coeff = parse_double(key, value);
    else if (key == "physics.rotation_gain") c.physics.rotation_gain = parse_double(key, value);
    else if (key == "physics.torque_tolerance") c.physics.torque_tolerance = parse_double(key, value);
    else if (key == "physics.max_step_rotation") c.physics.max_step_rotation = parse_double(key, value);
    else if (key == "physics.max_step_translation") c.physics.max_step_translation = parse_double(key, value);
    else if (key == "physics.min_separation") c.physics.min_separation = parse_double(key, value);
    else if (key == "physics.boundary_sample_spacing") c.physics.boundary_sample_spacing = parse_double(key, value);
    else if (key == "physics.max_steps") c.physics.max_steps = static_cast<int>(parse_int(key, value));
    else if (key == "train.epochs") c.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "train.batch_size") c.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "train.learning_rate") c.learning_rate = parse_double(key, value);
    else if (key == "train.lr_decay") c.lr_decay = parse_double(key, value);
    else if (key == "train.max_samples") c.max_samples = static_cast<int>(parse_int(key, value));
    else if (key == "planner.n") c.plan_n = static_cast<int>(parse_int(key, value));
    else if (key == "planner.top_fraction") c.top_fraction = parse_double(key, value);
    else if (key == "planner.trials_per_object") c.trials_per_object = static_cast<int>(parse_int(key, value));
    else if (key == "out_dir") c.out_dir = value;
    else throw ConfigError("unknown config key: " + key);
  }
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string default_config_text() {
  return R"(# Run configuration. Flat key = value lines, '#' starts a comment.
# Unknown keys are rejected.

# Part corpus generation and grasp collection.
corpus.num_parts = 80          # parts generated by gen-parts, all families
corpus.grasps_per_part = 1000  # random grasp attempts per part
corpus.seed = 1                # master seed for the whole run
corpus.val_fraction = 0.2      # object-wise validation fraction
corpus.workers = 1             # collection threads (output is worker-independent)
corpus.pose_jitter = 0.02      # resting-position jitter, meters

# Depth sensing.
sensor.full_window = 0.30      # object-centric view side length, meters
sensor.patch_window = 0.15     # grasp-centric patch side length, meters
sensor.camera_height = 0.70    # orthographic camera plane height, meters
sensor.noise_sigma = 0.003     # per-pixel depth noise, meters

# Quasi-static pinch simulation.
physics.pad_width = 0.02               # jaw pad extent, meters
physics.max_opening = 0.08             # initial jaw separation, meters
physics.closing_step = 0.0005          # separation decrement per step, meters
physics.friction_coeff = 0.5           # friction cone half-angle = atan of this
physics.rotation_gain = 0.6            # rad per unit contact torque
physics.torque_tolerance = 0.001       # net-torque equilibrium threshold
physics.max_step_rotation = 0.02       # per-pass rotation cap, rad
physics.max_step_translation = 0.002   # per-pass translation cap, meters
physics.min_separation = 0.001         # success needs this much opening left
physics.boundary_sample_spacing = 0.001  # contact discretization, meters
physics.max_steps = 2000               # divergence guard

# Training.
train.epochs = 100
train.batch_size = 64
train.learning_rate = 0.00001
train.lr_decay = 0.000001
train.max_samples = 0          # 0 = use all records

# Planning and evaluation experiments.
planner.n = 3200               # candidate grasps per plan
planner.top_fraction = 0.03    # quality-pool fraction
planner.trials_per_object = 30

out_dir = out
)";
}

// ---------------------------------------------------------------------------
// Metrics

std::pair<double, double> rmse_metrics(const std::vector<Eigen::Vector4d>& predictions,
                                       const std::vector<Eigen::Vector4d>& ground_truth) {
  if (predictions.size() != ground_truth.size())
    throw ShapeError("rmse_metrics: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("rmse_metrics: empty input");
  double trans_sq = 0.0;
  double rot_sq = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Eigen::Vector4d e = predictions[i] - ground_truth[i];
    trans_sq += e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
    const double a = wrap_angle(e[3]);
    rot_sq += a * a;
  }
  const double n = static_cast<double>(predictions.size());
  return {std::sqrt(trans_sq / n) * 100.0, std::sqrt(rot_sq / n) * (180.0 / kPi)};
}

// ---------------------------------------------------------------------------
// Predictors

NamedPredictor make_predictor(const std::string& name, GdnModel& model) {
  return {name, [&model](std::uint64_t, const Image& full, const Image& patch,
                         const Grasp& grasp) {
            const Image& obs = variant_uses_patch(model.variant) ? patch : full;
            return model.predict(obs, grasp).mean;
          }};
}

NamedPredictor make_predictor(const std::string& name, const LowessModel& model) {
  return {name, [&model](std::uint64_t part_id, const Image&, const Image&,
                         const Grasp& grasp) { return model.predict(part_id, grasp); }};
}

// ---------------------------------------------------------------------------
// Reports

namespace {

ModelMetrics metrics_over(const std::string& name, std::size_t model_index,
                          const std::vector<const TrialRow*>& successes) {
  ModelMetrics m;
  m.model = name;
  std::vector<Eigen::Vector4d> pred, truth;
  for (const TrialRow* row : successes) {
    pred.push_back(row->predictions[model_index]);
    truth.push_back(row->true_dg);
  }
  m.count = static_cast<long>(pred.size());
  if (!pred.empty()) {
    const auto [t, r] = rmse_metrics(pred, truth);
    m.trans_rmse_cm = t;
    m.rot_rmse_deg = r;
  }
  return m;
}

}  // namespace

EvalReport compute_report(const std::vector<std::string>& model_names,
                          std::vector<TrialRow> rows) {
  EvalReport report;
  report.model_names = model_names;
  report.rows = std::move(rows);
  report.trials = static_cast<long>(report.rows.size());

  std::vector<const TrialRow*> successes;
  std::vector<std::uint64_t> object_order;
  std::map<std::uint64_t, std::vector<const TrialRow*>> by_object;
  for (const TrialRow& row : report.rows) {
    if (row.success) {
      ++report.successes;
      successes.push_back(&row);
    }
    if (by_object.find(row.part_id) == by_object.end()) object_order.push_back(row.part_id);
    by_object[row.part_id].push_back(&row);
  }
  report.success_rate =
      report.trials > 0 ? static_cast<double>(report.successes) / report.trials : 0.0;

  for (std::size_t m = 0; m < model_names.size(); ++m)
    report.totals.push_back(metrics_over(model_names[m], m, successes));

  for (std::uint64_t id : object_order) {
    ObjectMetrics om;
    om.part_id = id;
    std::vector<const TrialRow*> object_successes;
    for (const TrialRow* row : by_object[id]) {
      ++om.trials;
      if (row->success) {
        ++om.successes;
        object_successes.push_back(row);
      }
    }
    for (std::size_t m = 0; m < model_names.size(); ++m)
      om.models.push_back(metrics_over(model_names[m], m, object_successes));
    report.per_object.push_back(std::move(om));
  }
  return report;
}

std::string EvalReport::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "part_id,trial,pose_x,pose_y,pose_theta,gx,gy,gz,gtheta,quality,pool,success,"
        "dg_x,dg_y,dg_z,dg_theta";
  for (const std::string& name : model_names)
    os << ',' << name << "_dx," << name << "_dy," << name << "_dz," << name << "_dtheta";
  os << '\n';
  for (const TrialRow& r : rows) {
    os << r.part_id << ',' << r.trial << ',' << r.pose.x << ',' << r.pose.y << ','
       << r.pose.theta << ',' << r.grasp.gx << ',' << r.grasp.gy << ',' << r.grasp.gz << ','
       << r.grasp.gtheta << ',' << r.quality << ',' << r.pool_size << ','
       << (r.success ? 1 : 0) << ',' << r.true_dg[0] << ',' << r.true_dg[1] << ','
       << r.true_dg[2] << ',' << r.true_dg[3];
    for (const Eigen::Vector4d& p : r.predictions)
      os << ',' << p[0] << ',' << p[1] << ',' << p[2] << ',' << p[3];
    os << '\n';
  }
  return os.str();
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os.precision(17);
  os << "trials = " << trials << "\n";
  os << "successes = " << successes << "\n";
  os << "success_rate = " << success_rate << "\n";
  for (const ModelMetrics& m : totals)
    os << "model = " << m.model << " trans_rmse_cm = " << m.trans_rmse_cm
       << " rot_rmse_deg = " << m.rot_rmse_deg << " count = " << m.count << "\n";
  return os.str();
}

EvalReport report_from_csv(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty report CSV");

  std::vector<std::string> columns;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) columns.push_back(cell);
  }
  constexpr std::size_t kFixed = 16;
  if (columns.size() < kFixed || (columns.size() - kFixed) % 4 != 0)
    throw std::invalid_argument("unexpected report CSV header");
  std::vector<std::string> names;
  for (std::size_t c = kFixed; c < columns.size(); c += 4) {
    const std::string& col = columns[c];
    if (col.size() < 3 || col.substr(col.size() - 3) != "_dx")
      throw std::invalid_argument("unexpected report CSV model column: " + col);
    names.push_back(col.substr(0, col.size() - 3));
  }

  std::vector<TrialRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns.size())
      throw std::invalid_argument("report CSV row width mismatch");
    TrialRow r;
    std::size_t i = 0;
    auto num = [&]() { return std::stod(cells[i++]); };
    r.part_id = static_cast<std::uint64_t>(std::stoull(cells[i++]));
    r.trial = static_cast<int>(num());
    r.pose.x = num();
    r.pose.y = num();
    r.pose.theta = num();
    r.grasp.gx = num();
    r.grasp.gy = num();
    r.grasp.gz = num();
    r.grasp.gtheta = num();
    r.quality = num();
    r.pool_size = static_cast<long>(num());
    r.success = num() != 0.0;
    for (int j = 0; j < 4; ++j) r.true_dg[j] = num();
    for (std::size_t m = 0; m < names.size(); ++m) {
      Eigen::Vector4d p;
      for (int j = 0; j < 4; ++j) p[j] = num();
      r.predictions.push_back(p);
    }
    rows.push_back(std::move(r));
  }
  return compute_report(names, std::move(rows));
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

using PlanFn = std::function<PlanResult(const Scene& scene, std::uint64_t seed)>;

std::vector<TrialRow> run_object_trials(const Part& part,
                                        const std::vector<NamedPredictor>& models,
                                        const ExperimentConfig& config, const PlanFn& plan) {
  std::vector<TrialRow> rows;
  const std::uint64_t part_seed = hash_seed(config.seed, part.part_id);
  for (int trial = 0; trial < config.trials_per_object; ++trial) {
    const std::uint64_t trial_seed = hash_seed(part_seed, trial + 1);
    Rng pose_rng(hash_seed(trial_seed, 1));
    Pose pose;
    pose.x = pose_rng.uniform(-config.pose_jitter, config.pose_jitter);
    pose.y = pose_rng.uniform(-config.pose_jitter, config.pose_jitter);
    pose.theta = 0.0;

    Scene scene = make_scene(part, pose, config.full_window, config.patch_window,
                             config.camera_height, config.noise_sigma);
    const PlanResult planned = plan(scene, hash_seed(trial_seed, 2));

    TrialRow row;
    row.part_id = part.part_id;
    row.trial = trial;
    row.pose = pose;
    row.grasp = planned.grasp;
    row.quality = planned.quality;
    row.pool_size = planned.pool_size;
    try {
      const GraspOutcome outcome = simulate_pinch(part, pose, planned.grasp, config.physics);
      row.success = outcome.success;
      if (outcome.success) row.true_dg = outcome.grasp_displacement.vec();
    } catch (const SimulationDivergence&) {
      row.success = false;
    }

    if (row.success) {
      const Image full = quantize_image(
          add_noise({scene.full, 0.0, pose.translation(), 0.0}, config.noise_sigma,
                    hash_seed(trial_seed, 3))
              .pixels);
      DepthImage patch = render_grasp_patch(
          *scene.field, part.height, pose.translation() + Vec2(row.grasp.gx, row.grasp.gy),
          row.grasp.gtheta, config.patch_window, config.camera_height);
      if (config.noise_sigma > 0.0)
        patch = add_noise(patch, config.noise_sigma, hash_seed(trial_seed, 4));
      const Image patch_img = quantize_image(patch.pixels);
      for (const NamedPredictor& m : models)
        row.predictions.push_back(m.predict(part.part_id, full, patch_img, row.grasp));
    } else {
      row.predictions.assign(models.size(), Eigen::Vector4d::Zero());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

EvalReport run_experiment(const std::vector<Part>& parts,
                          const std::vector<NamedPredictor>& models,
                          const ExperimentConfig& config, const PlanFn& plan) {
  std::vector<std::vector<TrialRow>> per_part(parts.size());
  const int workers = std::max(1, config.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < parts.size(); ++i)
      per_part[i] = run_object_trials(parts[i], models, config, plan);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < parts.size(); i = next.fetch_add(1))
          per_part[i] = run_object_trials(parts[i], models, config, plan);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<TrialRow> rows;
  for (auto& pr : per_part)
    for (auto& row : pr) rows.push_back(std::move(row));
  std::vector<std::string> names;
  for (const NamedPredictor& m : models) names.push_back(m.name);
  return compute_report(names, std::move(rows));
}

}  // namespace

EvalReport run_experiment_quality(const std::vector<Part>& parts, GqnModel& gqn,
                                  const std::vector<NamedPredictor>& models,
                                  const ExperimentConfig& config) {
  return run_experiment(parts, models, config, [&](const Scene& scene, std::uint64_t seed) {
    return plan_quality_only(scene, gqn, config.plan_n, seed);
  });
}

EvalReport run_experiment_precise(const std::vector<Part>& parts, GqnModel& gqn,
                                  GdnModel& planner_gdn,
                                  const std::vector<NamedPredictor>& models,
                                  const ExperimentConfig& config) {
  if (!variant_has_variance(planner_gdn.variant))
    throw std::invalid_argument(
        "run_experiment_precise needs an M+V displacement model; variant '" +
        to_string(planner_gdn.variant) + "' predicts means only");
  return run_experiment(parts, models, config, [&](const Scene& scene, std::uint64_t seed) {
    return plan_precise(scene, gqn, planner_gdn, config.plan_n, config.top_fraction, seed);
  });
}

}  // namespace pgrasp
