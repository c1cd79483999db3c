#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pgrasp/harness.hpp"
#include "pgrasp/rng.hpp"

namespace pgrasp {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (key = value lines)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides config out_dir)");
  cmd->add_option("--seed", args.seed, "master seed (overrides config corpus.seed)")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

Config resolve_config(const CommonArgs& args) {
  Config config = args.config_path.empty() ? Config{} : load_config(args.config_path);
  if (args.seed_set) config.seed = args.seed;
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  fs::create_directories(config.out_dir);
  return config;
}

std::string out_path(const Config& config, const std::string& name) {
  return (fs::path(config.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
}

void write_history_csv(const std::string& path, const std::vector<EpochMetric>& history,
                       const char* metric_name) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,train_" << metric_name << ",val_" << metric_name << "\n";
  for (const EpochMetric& m : history)
    os << m.epoch << ',' << m.loss << ',' << m.train_metric << ',' << m.val_metric << "\n";
  write_text(path, os.str());
}

CollectConfig collect_config_from(const Config& config) {
  CollectConfig cc;
  cc.grasps_per_part = config.grasps_per_part;
  cc.master_seed = config.seed;
  cc.full_window = config.full_window;
  cc.patch_window = config.patch_window;
  cc.camera_height = config.camera_height;
  cc.noise_sigma = config.noise_sigma;
  cc.pose_jitter = config.pose_jitter;
  cc.workers = config.workers;
  cc.physics = config.physics;
  return cc;
}

TrainConfig train_config_from(const Config& config) {
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.learning_rate = config.learning_rate;
  tc.lr_decay = config.lr_decay;
  tc.seed = config.seed;
  tc.max_samples = config.max_samples;
  return tc;
}

ExperimentConfig experiment_config_from(const Config& config) {
  ExperimentConfig ec;
  ec.trials_per_object = config.trials_per_object;
  ec.plan_n = config.plan_n;
  ec.top_fraction = config.top_fraction;
  ec.seed = config.seed;
  ec.full_window = config.full_window;
  ec.patch_window = config.patch_window;
  ec.camera_height = config.camera_height;
  ec.noise_sigma = config.noise_sigma;
  ec.pose_jitter = config.pose_jitter;
  ec.workers = config.workers;
  ec.physics = config.physics;
  return ec;
}

GqnModel load_gqn(const Config& config) {
  GqnModel gqn(0);
  load_checkpoint_into(out_path(config, "gqn.pgwt"), gqn.net.parameters());
  return gqn;
}

GdnModel load_gdn(const Config& config, GdnVariant variant) {
  GdnModel gdn(variant, 0);
  load_checkpoint_into(out_path(config, "gdn-" + to_string(variant) + ".pgwt"),
                       gdn.net.parameters());
  return gdn;
}

void write_stats_csv(const Config& config, const std::vector<CorpusStats>& stats) {
  std::ostringstream os;
  os.precision(17);
  os << "part_id,success_rate,longest_axis\n";
  for (const CorpusStats& s : stats)
    os << s.part_id << ',' << s.success_rate << ',' << s.longest_axis << "\n";
  write_text(out_path(config, "corpus_stats.csv"), os.str());
}

std::vector<CorpusStats> read_stats_csv(const Config& config) {
  std::ifstream in(out_path(config, "corpus_stats.csv"));
  if (!in)
    throw std::runtime_error("missing corpus_stats.csv in " + config.out_dir +
                             "; run `collect` first");
  std::vector<CorpusStats> stats;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, rate, axis;
    std::getline(ls, id, ',');
    std::getline(ls, rate, ',');
    std::getline(ls, axis, ',');
    stats.push_back({std::stoull(id), std::stod(rate), std::stod(axis), ""});
  }
  return stats;
}

int cmd_gen_parts(const Config& config) {
  constexpr PartFamily kFamilies[] = {PartFamily::kNgon, PartFamily::kGear,
                                      PartFamily::kLBracket, PartFamily::kSlottedBar,
                                      PartFamily::kEllipse};
  std::vector<Part> parts;
  for (int i = 0; i < config.num_parts; ++i)
    parts.push_back(generate_part(hash_seed(config.seed, i + 1), kFamilies[i % 5]));
  write_parts(out_path(config, "parts.pgpc"), parts);
  std::cout << "wrote " << parts.size() << " parts to " << out_path(config, "parts.pgpc")
            << "\n";
  return 0;
}

int cmd_collect(const Config& config) {
  const std::vector<Part> parts = read_parts(out_path(config, "parts.pgpc"));
  const CollectResult result = collect(parts, collect_config_from(config));
  write_dataset(out_path(config, "dataset.pgds"), result.records);
  write_manifest(out_path(config, "dataset.manifest"), result.manifest);
  write_stats_csv(config, result.stats);
  std::cout << "collected " << result.records.size() << " records from " << parts.size()
            << " parts\n";
  return 0;
}

int cmd_filter(const Config& config) {
  const std::vector<Part> parts = read_parts(out_path(config, "parts.pgpc"));
  const std::vector<CorpusStats> stats = read_stats_csv(config);
  const std::set<std::uint64_t> retained = filter_corpus(stats);

  std::vector<Part> kept_parts;
  for (const Part& p : parts)
    if (retained.count(p.part_id)) kept_parts.push_back(p);
  write_parts(out_path(config, "filtered_parts.pgpc"), kept_parts);

  const std::vector<GraspRecord> records = read_dataset(out_path(config, "dataset.pgds"));
  std::vector<GraspRecord> kept;
  for (const GraspRecord& r : records)
    if (retained.count(r.part_id)) kept.push_back(r);
  write_dataset(out_path(config, "filtered.pgds"), kept);

  std::cout << "retained " << kept_parts.size() << " of " << parts.size() << " parts ("
            << kept.size() << " records)\n";
  return 0;
}

int cmd_split(const Config& config) {
  const std::vector<Part> parts = read_parts(out_path(config, "filtered_parts.pgpc"));
  std::vector<std::uint64_t> ids;
  for (const Part& p : parts) ids.push_back(p.part_id);
  const Split split = split_objectwise(ids, config.val_fraction, hash_seed(config.seed, 1009));

  const std::set<std::uint64_t> val_set(split.val.begin(), split.val.end());
  std::vector<Part> train_parts, val_parts;
  for (const Part& p : parts) (val_set.count(p.part_id) ? val_parts : train_parts).push_back(p);
  write_parts(out_path(config, "train_parts.pgpc"), train_parts);
  write_parts(out_path(config, "val_parts.pgpc"), val_parts);

  const std::vector<GraspRecord> records = read_dataset(out_path(config, "filtered.pgds"));
  std::vector<GraspRecord> train_records, val_records;
  for (const GraspRecord& r : records)
    (val_set.count(r.part_id) ? val_records : train_records).push_back(r);
  write_dataset(out_path(config, "train.pgds"), train_records);
  write_dataset(out_path(config, "val.pgds"), val_records);

  std::ostringstream os;
  for (std::uint64_t id : split.train) os << id << " = train\n";
  for (std::uint64_t id : split.val) os << id << " = val\n";
  write_text(out_path(config, "split.txt"), os.str());
  std::cout << "split: " << train_parts.size() << " train / " << val_parts.size()
            << " val parts\n";
  return 0;
}

std::vector<GraspRecord> balanced_or_raw(const std::vector<GraspRecord>& records,
                                         std::uint64_t seed) {
  try {
    return balance_for_gqn(records, seed);
  } catch (const UnbalanceableData&) {
    return records;
  }
}

int cmd_train_gqn(const Config& config) {
  const auto train = read_dataset(out_path(config, "train.pgds"));
  const auto val = read_dataset(out_path(config, "val.pgds"));
  auto result = train_gqn(balance_for_gqn(train, hash_seed(config.seed, 41)),
                          balanced_or_raw(val, hash_seed(config.seed, 42)),
                          train_config_from(config));
  save_checkpoint(out_path(config, "gqn.pgwt"), result.model.net.parameters());
  write_history_csv(out_path(config, "gqn_history.csv"), result.history, "accuracy");
  std::cout << "gqn train_accuracy=" << result.train_accuracy
            << " val_accuracy=" << result.val_accuracy << "\n";
  return 0;
}

int cmd_train_gdn(const Config& config, const std::string& variant_name) {
  const GdnVariant variant = gdn_variant_from_string(variant_name);
  const auto train = successful_only(read_dataset(out_path(config, "train.pgds")));
  const auto val = successful_only(read_dataset(out_path(config, "val.pgds")));

  std::optional<GqnModel> gqn;
  if (variant_uses_patch(variant) && fs::exists(out_path(config, "gqn.pgwt")))
    gqn.emplace(load_gqn(config));
  auto result = train_gdn(train, val, variant, train_config_from(config),
                          gqn ? &*gqn : nullptr);
  save_checkpoint(out_path(config, "gdn-" + variant_name + ".pgwt"),
                  result.model.net.parameters());
  write_history_csv(out_path(config, "gdn-" + variant_name + "_history.csv"), result.history,
                    "rmse");
  std::cout << "gdn-" << variant_name << " val_rmse=" << result.val_rmse.transpose() << "\n";
  return 0;
}

// Every displacement model with a checkpoint in the run directory, plus the
// LOWESS baseline over the evaluation objects' own successful records.
struct EvalModels {
  std::vector<std::unique_ptr<GdnModel>> gdns;
  LowessModel lowess;
  std::vector<NamedPredictor> predictors;
};

EvalModels load_eval_models(const Config& config) {
  EvalModels m;
  for (GdnVariant v : {GdnVariant::kOcfiM, GdnVariant::kOcfiMV, GdnVariant::kGcipM,
                       GdnVariant::kGcipMV}) {
    const std::string name = to_string(v);
    if (!fs::exists(out_path(config, "gdn-" + name + ".pgwt"))) continue;
    m.gdns.push_back(std::make_unique<GdnModel>(load_gdn(config, v)));
    m.predictors.push_back(make_predictor(name, *m.gdns.back()));
  }
  m.lowess = LowessModel::from_records(read_dataset(out_path(config, "val.pgds")));
  m.predictors.push_back(make_predictor("lowess", m.lowess));
  return m;
}

int cmd_eval(const Config& config, bool precise) {
  const std::vector<Part> parts = read_parts(out_path(config, "val_parts.pgpc"));
  GqnModel gqn = load_gqn(config);
  EvalModels models = load_eval_models(config);
  const ExperimentConfig ec = experiment_config_from(config);

  EvalReport report;
  std::string tag;
  if (precise) {
    tag = "exp2";
    GdnModel* planner_gdn = nullptr;
    for (auto& g : models.gdns)
      if (variant_has_variance(g->variant) &&
          (!planner_gdn || variant_uses_patch(g->variant)))
        planner_gdn = g.get();
    if (!planner_gdn)
      throw std::runtime_error(
          "eval-exp2 needs a trained M+V displacement model (ocfi-mv or gcip-mv)");
    report = run_experiment_precise(parts, gqn, *planner_gdn, models.predictors, ec);
  } else {
    tag = "exp1";
    report = run_experiment_quality(parts, gqn, models.predictors, ec);
  }

  write_text(out_path(config, tag + ".csv"), report.csv());
  write_text(out_path(config, tag + "_summary.txt"), report.summary());
  std::cout << report.summary();

  // Comparison row per model once both experiments exist.
  const std::string other = out_path(config, "exp1.csv");
  if (precise && fs::exists(other)) {
    std::ifstream in(other);
    std::ostringstream buf;
    buf << in.rdbuf();
    const EvalReport exp1 = report_from_csv(buf.str());
    std::ostringstream os;
    os.precision(17);
    os << "model,exp1_trans_rmse_cm,exp1_rot_rmse_deg,exp2_trans_rmse_cm,exp2_rot_rmse_deg\n";
    for (const ModelMetrics& m2 : report.totals)
      for (const ModelMetrics& m1 : exp1.totals)
        if (m1.model == m2.model)
          os << m2.model << ',' << m1.trans_rmse_cm << ',' << m1.rot_rmse_deg << ','
             << m2.trans_rmse_cm << ',' << m2.rot_rmse_deg << "\n";
    write_text(out_path(config, "comparison.csv"), os.str());
  }
  return 0;
}

int cmd_plan(const Config& config, std::uint64_t part_id, bool part_id_set) {
  const std::string parts_file = fs::exists(out_path(config, "val_parts.pgpc"))
                                     ? out_path(config, "val_parts.pgpc")
                                     : out_path(config, "parts.pgpc");
  const std::vector<Part> parts = read_parts(parts_file);
  if (parts.empty()) throw std::runtime_error("no parts in " + parts_file);
  const Part* part = &parts.front();
  if (part_id_set) {
    part = nullptr;
    for (const Part& p : parts)
      if (p.part_id == part_id) part = &p;
    if (!part)
      throw std::runtime_error("part " + std::to_string(part_id) + " not in " + parts_file);
  }

  GqnModel gqn = load_gqn(config);
  Rng pose_rng(hash_seed(config.seed, part->part_id));
  Pose pose{pose_rng.uniform(-config.pose_jitter, config.pose_jitter),
            pose_rng.uniform(-config.pose_jitter, config.pose_jitter), 0.0};
  const Scene scene = make_scene(*part, pose, config.full_window, config.patch_window,
                                 config.camera_height, config.noise_sigma);

  PlanResult result;
  const std::string mv_path = out_path(config, "gdn-gcip-mv.pgwt");
  const std::string mv_path_ocfi = out_path(config, "gdn-ocfi-mv.pgwt");
  if (fs::exists(mv_path) || fs::exists(mv_path_ocfi)) {
    GdnModel gdn = load_gdn(
        config, fs::exists(mv_path) ? GdnVariant::kGcipMV : GdnVariant::kOcfiMV);
    result = plan_precise(scene, gqn, gdn, config.plan_n, config.top_fraction,
                          hash_seed(config.seed, 77));
  } else {
    result = plan_quality_only(scene, gqn, config.plan_n, hash_seed(config.seed, 77));
  }
  const std::string line = "part_id=" + std::to_string(part->part_id) + " " +
                           result.report_line() + "\n";
  std::cout << line;
  write_text(out_path(config, "plan.txt"), line);
  return 0;
}

// Shrunken (16x16, few channels) variant of the production architecture;
// finite differences over the full-size network would take hours.
NetConfig gradcheck_config(int action_dim, int head_dim, std::uint64_t seed) {
  NetConfig nc;
  nc.image_size = 16;
  nc.conv_channels[0] = 4;
  nc.conv_channels[1] = 6;
  nc.conv_channels[2] = 8;
  nc.image_fc = 16;
  nc.action_fc = 8;
  nc.merge_fc = 16;
  nc.action_dim = action_dim;
  nc.head_dim = head_dim;
  nc.init_seed = hash_seed(seed, 1);
  nc.dropout_seed = hash_seed(seed, 2);
  return nc;
}

int cmd_gradcheck(const Config& config) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(hash_seed(config.seed, seed));
    auto fill = [&rng](Tensor& t) {
      for (long i = 0; i < t.values.size(); ++i) t.values[i] = rng.normal();
    };
    const long n = 2;

    {  // quality-network shape: 3-vector action, scalar sigmoid + BCE head
      TwoBranchNet net(gradcheck_config(3, 1, hash_seed(seed, 10)));
      Tensor image({n, 16 * 16}), action({n, 3}), target({n, 1});
      fill(image);
      fill(action);
      for (long i = 0; i < n; ++i) target.values[i] = (i % 2 == 0) ? 1.0 : 0.0;
      worst = std::max(worst, grad_check(net, image, action, target, GradCheckLoss::kBce));
    }
    {  // displacement-network shape: 4-vector action, 4+4 Gaussian NLL head
      TwoBranchNet net(gradcheck_config(4, 8, hash_seed(seed, 11)));
      Tensor image({n, 16 * 16}), action({n, 4}), target({n, 4});
      fill(image);
      fill(action);
      fill(target);
      worst = std::max(worst,
                       grad_check(net, image, action, target, GradCheckLoss::kGaussianNll));
    }
  }
  std::cout << "gradcheck max relative error = " << worst << "\n";
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int cli(int argc, const char* const* argv) {
  CLI::App app{"precision pinch-grasp pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string variant = "gcip-mv";
  std::uint64_t part_id = 0;
  bool part_id_set = false;

  CLI::App* gen = app.add_subcommand("gen-parts", "generate the part corpus");
  CLI::App* col = app.add_subcommand("collect", "simulate random grasps over the corpus");
  CLI::App* fil = app.add_subcommand("filter", "drop too-easy/too-hard/oversized parts");
  CLI::App* spl = app.add_subcommand("split", "object-wise train/validation split");
  CLI::App* tgq = app.add_subcommand("train-gqn", "train the grasp quality network");
  CLI::App* tgd = app.add_subcommand("train-gdn", "train a grasp displacement network");
  tgd->add_option("--variant", variant, "ocfi-m, ocfi-mv, gcip-m or gcip-mv")->required();
  CLI::App* ex1 = app.add_subcommand("eval-exp1", "quality-only planning experiment");
  CLI::App* ex2 = app.add_subcommand("eval-exp2", "quality + low-variance planning experiment");
  CLI::App* pln = app.add_subcommand("plan", "plan one grasp and print the report line");
  pln->add_option("--part-id", part_id, "part to plan for (default: first)")
      ->each([&part_id_set](const std::string&) { part_id_set = true; });
  CLI::App* grd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  for (CLI::App* cmd : {gen, col, fil, spl, tgq, tgd, ex1, ex2, pln, grd})
    add_common(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const Config config = resolve_config(args);
    if (gen->parsed()) return cmd_gen_parts(config);
    if (col->parsed()) return cmd_collect(config);
    if (fil->parsed()) return cmd_filter(config);
    if (spl->parsed()) return cmd_split(config);
    if (tgq->parsed()) return cmd_train_gqn(config);
    if (tgd->parsed()) return cmd_train_gdn(config, variant);
    if (ex1->parsed()) return cmd_eval(config, false);
    if (ex2->parsed()) return cmd_eval(config, true);
    if (pln->parsed()) return cmd_plan(config, part_id, part_id_set);
    if (grd->parsed()) return cmd_gradcheck(config);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace pgrasp
