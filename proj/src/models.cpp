#include "pgrasp/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "pgrasp/rng.hpp"

namespace pgrasp {

using MapRow = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

GdnVariant gdn_variant_from_string(const std::string& name) {
  if (name == "ocfi-m") return GdnVariant::kOcfiM;
  if (name == "ocfi-mv") return GdnVariant::kOcfiMV;
  if (name == "gcip-m") return GdnVariant::kGcipM;
  if (name == "gcip-mv") return GdnVariant::kGcipMV;
  throw std::invalid_argument("unknown GDN variant: " + name +
                              " (expected ocfi-m, ocfi-mv, gcip-m, gcip-mv)");
}

std::string to_string(GdnVariant v) {
  switch (v) {
    case GdnVariant::kOcfiM: return "ocfi-m";
    case GdnVariant::kOcfiMV: return "ocfi-mv";
    case GdnVariant::kGcipM: return "gcip-m";
    case GdnVariant::kGcipMV: return "gcip-mv";
  }
  throw std::invalid_argument("unknown GDN variant enum");
}

bool variant_uses_patch(GdnVariant v) {
  return v == GdnVariant::kGcipM || v == GdnVariant::kGcipMV;
}

bool variant_has_variance(GdnVariant v) {
  return v == GdnVariant::kOcfiMV || v == GdnVariant::kGcipMV;
}

// ---------------------------------------------------------------------------
// Scaling

namespace {

double clip_unit(double v, long& clip_count) {
  if (v < -1.0 || v > 1.0) {
    ++clip_count;
    return std::clamp(v, -1.0, 1.0);
  }
  return v;
}

}  // namespace

Eigen::Vector4d ActionScaler::scale4(const Grasp& g) const {
  return {clip_unit(g.gx / translation_half, clip_count),
          clip_unit(g.gy / translation_half, clip_count),
          clip_unit(g.gz / height_bound, clip_count),
          clip_unit(g.gtheta / (0.5 * kPi), clip_count)};
}

Eigen::Vector3d ActionScaler::scale3(const Grasp& g) const {
  const Eigen::Vector4d v = scale4(g);
  return v.head<3>();
}

Grasp ActionScaler::unscale4(const Eigen::Vector4d& v) const {
  return {v[0] * translation_half, v[1] * translation_half, v[2] * height_bound,
          v[3] * 0.5 * kPi};
}

Eigen::Vector4d TargetScaler::scale(const Displacement& dg) const {
  return {dg.dx / translation_scale, dg.dy / translation_scale, dg.dz / translation_scale,
          dg.dtheta / (0.5 * kPi)};
}

Displacement TargetScaler::unscale_mean(const Eigen::Vector4d& mu) const {
  return {mu[0] * translation_scale, mu[1] * translation_scale, mu[2] * translation_scale,
          wrap_angle(mu[3] * 0.5 * kPi)};
}

Eigen::Vector4d TargetScaler::unscale_variance(const Eigen::Vector4d& var) const {
  const double t2 = translation_scale * translation_scale;
  const double r2 = 0.25 * kPi * kPi;
  return {var[0] * t2, var[1] * t2, var[2] * t2, var[3] * r2};
}

// ---------------------------------------------------------------------------
// Shared batching helpers

namespace {

constexpr int kChunk = 128;

NetConfig gqn_config(std::uint64_t seed) {
  NetConfig c;
  c.action_dim = 3;
  c.head_dim = 1;
  c.init_seed = hash_seed(seed, 11);
  c.dropout_seed = hash_seed(seed, 12);
  return c;
}

NetConfig gdn_config(GdnVariant variant, std::uint64_t seed) {
  NetConfig c;
  c.action_dim = variant_uses_patch(variant) ? 3 : 4;
  c.head_dim = variant_has_variance(variant) ? 8 : 4;
  c.init_seed = hash_seed(seed, 21);
  c.dropout_seed = hash_seed(seed, 22);
  return c;
}

// Pack standardized images row-major into [N, 4096].
Tensor pack_images(const std::vector<const Image*>& images, std::size_t begin, std::size_t end) {
  const long n = static_cast<long>(end - begin);
  Tensor t({n, static_cast<long>(kImageSize) * kImageSize});
  for (long s = 0; s < n; ++s) {
    const Image std_img = standardize(*images[begin + s]);
    double* dst = t.values.data() + s * kImageSize * kImageSize;
    for (int i = 0; i < kImageSize; ++i)
      for (int j = 0; j < kImageSize; ++j) dst[i * kImageSize + j] = std_img(i, j);
  }
  return t;
}

Tensor pack_rows(const std::vector<Eigen::VectorXd>& rows, std::size_t begin, std::size_t end) {
  const long n = static_cast<long>(end - begin);
  const long d = rows.empty() ? 0 : rows[0].size();
  Tensor t({n, d});
  for (long s = 0; s < n; ++s)
    for (long j = 0; j < d; ++j) t.values[s * d + j] = rows[begin + s][j];
  return t;
}

// The closing axis is a line, so relabeling a grasp at gtheta + pi leaves the
// grasp, its action features, and its object-frame displacement unchanged
// while rotating the grasp-centric patch by 180 degrees. Every patch sample
// therefore has an exact twin usable as training augmentation.
Image rot180(const Image& img) { return img.reverse(); }

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// GQN

GqnModel::GqnModel(std::uint64_t seed) : net(gqn_config(seed)) {}

double GqnModel::predict(const Image& patch, const Grasp& grasp) {
  return predict_batch({&patch}, {grasp})[0];
}

Eigen::VectorXd GqnModel::predict_batch(const std::vector<const Image*>& patches,
                                        const std::vector<Grasp>& grasps) {
  if (patches.size() != grasps.size()) throw ShapeError("predict_batch: length mismatch");
  const std::size_t n = patches.size();
  Eigen::VectorXd out(n);
  std::vector<Eigen::VectorXd> actions(n);
  for (std::size_t i = 0; i < n; ++i) actions[i] = action_scaler.scale3(grasps[i]);
  // Quality is exactly invariant under the pi-relabeling of the closing
  // axis, so average the prediction over the patch and its 180-degree twin.
  std::vector<Image> twins(n);
  std::vector<const Image*> twin_views(n);
  for (std::size_t i = 0; i < n; ++i) {
    twins[i] = rot180(*patches[i]);
    twin_views[i] = &twins[i];
  }
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    Tensor act = pack_rows(actions, begin, end);
    Tensor h = net.forward(pack_images(patches, begin, end), act, /*training=*/false);
    Tensor ht = net.forward(pack_images(twin_views, begin, end), act, /*training=*/false);
    for (std::size_t i = begin; i < end; ++i) {
      const double q = 1.0 / (1.0 + std::exp(-h.values[i - begin]));
      const double qt = 1.0 / (1.0 + std::exp(-ht.values[i - begin]));
      out[static_cast<long>(i)] = std::getenv("PG_NO_TTA") ? q : 0.5 * (q + qt);
    }
  }
  return out;
}

namespace {

struct PackedGqnData {
  std::vector<const Image*> images;
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> labels;
};

PackedGqnData pack_gqn(const std::vector<GraspRecord>& records, const ActionScaler& scaler) {
  PackedGqnData d;
  d.images.reserve(records.size());
  for (const GraspRecord& r : records) {
    d.images.push_back(&r.gcip);
    d.actions.push_back(scaler.scale3(r.grasp));
    d.labels.push_back(r.success ? 1.0 : 0.0);
  }
  return d;
}

std::vector<GraspRecord> maybe_subsample(const std::vector<GraspRecord>& records, int cap,
                                         std::uint64_t seed) {
  if (cap <= 0 || records.size() <= static_cast<std::size_t>(cap)) return records;
  auto idx = shuffled_indices(records.size(), seed);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<GraspRecord> out;
  out.reserve(cap);
  for (std::size_t i : idx) out.push_back(records[i]);
  return out;
}

double gqn_accuracy(GqnModel& model, const PackedGqnData& data) {
  if (data.images.empty()) return 0.0;
  long correct = 0;
  const std::size_t n = data.images.size();
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    Tensor img = pack_images(data.images, begin, end);
    Tensor act = pack_rows(data.actions, begin, end);
    Tensor h = model.net.forward(img, act, false);
    for (std::size_t i = begin; i < end; ++i) {
      const double q = 1.0 / (1.0 + std::exp(-h.values[i - begin]));
      if ((q >= 0.5) == (data.labels[i] >= 0.5)) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

GqnTrainResult train_gqn(const std::vector<GraspRecord>& train,
                         const std::vector<GraspRecord>& val, const TrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("train_gqn: empty training data");
  GqnTrainResult result{GqnModel(config.seed), {}, 0.0, 0.0};
  GqnModel& model = result.model;

  const auto train_records = maybe_subsample(train, config.max_samples,
                                             hash_seed(config.seed, 31));
  PackedGqnData train_data = pack_gqn(train_records, model.action_scaler);
  const PackedGqnData val_data = pack_gqn(val, model.action_scaler);

  // Closing-axis pi-periodicity: train on each patch and its 180-degree twin.
  std::vector<Image> twins;
  const std::size_t base = train_data.images.size();
  twins.reserve(base);
  for (std::size_t i = 0; i < base; ++i) twins.push_back(rot180(*train_data.images[i]));
  for (std::size_t i = 0; i < base; ++i) {
    train_data.images.push_back(&twins[i]);
    train_data.actions.push_back(train_data.actions[i]);
    train_data.labels.push_back(train_data.labels[i]);
  }

  OptimizerState opt;
  opt.learning_rate = config.learning_rate;
  opt.decay = config.lr_decay;
  auto params = model.net.parameters();

  const std::size_t n = train_data.images.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(n, hash_seed(config.seed, 100 + epoch));
    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      std::vector<const Image*> images;
      std::vector<Eigen::VectorXd> actions;
      Tensor labels({static_cast<long>(end - begin), 1});
      for (std::size_t i = begin; i < end; ++i) {
        images.push_back(train_data.images[order[i]]);
        actions.push_back(train_data.actions[order[i]]);
        labels.values[static_cast<long>(i - begin)] = train_data.labels[order[i]];
      }
      Tensor img = pack_images(images, 0, images.size());
      Tensor act = pack_rows(actions, 0, actions.size());
      model.net.zero_grad();
      Tensor h = model.net.forward(img, act, /*training=*/true);
      Tensor q = h;
      q.values = 1.0 / (1.0 + (-h.values).exp());
      BceResult loss = bce_loss(q, labels);
      Tensor dh = h;
      dh.values = loss.dq.values * q.values * (1.0 - q.values);
      model.net.backward(dh);
      rmsprop_step(params, opt);
      epoch_loss += loss.loss;
      ++batches;
    }
    EpochMetric m;
    m.epoch = epoch;
    m.loss = batches ? epoch_loss / batches : 0.0;
    m.train_metric = gqn_accuracy(model, train_data);
    m.val_metric = val.empty() ? 0.0 : gqn_accuracy(model, val_data);
    result.history.push_back(m);
  }
  if (!result.history.empty()) {
    result.train_accuracy = result.history.back().train_metric;
    result.val_accuracy = result.history.back().val_metric;
  }
  return result;
}

// ---------------------------------------------------------------------------
// GDN

GdnModel::GdnModel(GdnVariant v, std::uint64_t seed) : variant(v), net(gdn_config(v, seed)) {}

GdnPrediction GdnModel::predict(const Image& obs, const Grasp& grasp) {
  return predict_batch({&obs}, {grasp})[0];
}

std::vector<GdnPrediction> GdnModel::predict_batch(const std::vector<const Image*>& obs,
                                                   const std::vector<Grasp>& grasps) {
  if (obs.size() != grasps.size()) throw ShapeError("predict_batch: length mismatch");
  const bool with_var = variant_has_variance(variant);
  const std::size_t n = obs.size();
  std::vector<Eigen::VectorXd> actions(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (variant_uses_patch(variant))
      actions[i] = action_scaler.scale3(grasps[i]);
    else
      actions[i] = action_scaler.scale4(grasps[i]);
  }
  // Patch observations: the object-frame displacement is invariant under the
  // pi-relabeling of the closing axis, so average over the 180-degree twin.
  const bool tta = variant_uses_patch(variant);
  std::vector<Image> twins;
  std::vector<const Image*> twin_views;
  if (tta) {
    twins.resize(n);
    twin_views.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      twins[i] = rot180(*obs[i]);
      twin_views[i] = &twins[i];
    }
  }
  std::vector<GdnPrediction> out(n);
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    Tensor act = pack_rows(actions, begin, end);
    Tensor h = net.forward(pack_images(obs, begin, end), act, false);
    Tensor ht = tta ? net.forward(pack_images(twin_views, begin, end), act, false) : h;
    const long d = 4;
    for (std::size_t i = begin; i < end; ++i) {
      const double* row = h.values.data() + (i - begin) * h.shape[1];
      const double* row_t = ht.values.data() + (i - begin) * ht.shape[1];
      Eigen::Vector4d mu_scaled;
      for (long j = 0; j < d; ++j) mu_scaled[j] = 0.5 * (row[j] + row_t[j]);
      GdnPrediction p;
      const Displacement mu = target_scaler.unscale_mean(mu_scaled);
      p.mean = mu.vec();
      if (with_var) {
        Eigen::Vector4d var_scaled;
        for (long j = 0; j < d; ++j) {
          const double v = std::exp(std::clamp(row[4 + j], kLogVarMin, kLogVarMax));
          const double vt = std::exp(std::clamp(row_t[4 + j], kLogVarMin, kLogVarMax));
          var_scaled[j] = 0.5 * (v + vt);
        }
        p.variance = target_scaler.unscale_variance(var_scaled);
        p.has_variance = true;
      }
      out[i] = p;
    }
  }
  return out;
}

GdnModel init_gdn_from_gqn(GqnModel& gqn, GdnVariant variant, std::uint64_t seed) {
  GdnModel gdn(variant, seed);
  if (!variant_uses_patch(variant)) return gdn;  // OCFI variants stay random
  auto src = gqn.net.parameters();
  auto dst = gdn.net.parameters();
  for (Parameter* s : src) {
    if (s->name.rfind("conv", 0) != 0) continue;
    bool found = false;
    for (Parameter* t : dst) {
      if (t->name != s->name) continue;
      if (t->value.shape != s->value.shape)
        throw ShapeError("convolution shape mismatch transferring " + s->name);
      t->value.values = s->value.values;
      found = true;
    }
    if (!found) throw ShapeError("missing convolution parameter " + s->name);
  }
  return gdn;
}

namespace {

struct PackedGdnData {
  std::vector<const Image*> images;
  std::vector<Eigen::VectorXd> actions;
  std::vector<Eigen::Vector4d> targets;  // scaled
};

PackedGdnData pack_gdn(const std::vector<GraspRecord>& records, const GdnModel& model) {
  PackedGdnData d;
  for (const GraspRecord& r : records) {
    d.images.push_back(variant_uses_patch(model.variant) ? &r.gcip : &r.ocfi);
    if (variant_uses_patch(model.variant))
      d.actions.push_back(model.action_scaler.scale3(r.grasp));
    else
      d.actions.push_back(model.action_scaler.scale4(r.grasp));
    d.targets.push_back(model.target_scaler.scale(r.grasp_displacement));
  }
  return d;
}

// Per-dimension RMSE in physical units against record ground truth.
Eigen::Vector4d gdn_rmse(GdnModel& model, const std::vector<GraspRecord>& records) {
  if (records.empty()) return Eigen::Vector4d::Zero();
  std::vector<const Image*> obs;
  std::vector<Grasp> grasps;
  for (const GraspRecord& r : records) {
    obs.push_back(variant_uses_patch(model.variant) ? &r.gcip : &r.ocfi);
    grasps.push_back(r.grasp);
  }
  const auto preds = model.predict_batch(obs, grasps);
  Eigen::Vector4d sq = Eigen::Vector4d::Zero();
  for (std::size_t i = 0; i < records.size(); ++i) {
    Eigen::Vector4d err = preds[i].mean - records[i].grasp_displacement.vec();
    err[3] = wrap_angle(err[3]);
    sq += err.cwiseProduct(err);
  }
  return (sq / static_cast<double>(records.size())).cwiseSqrt();
}

}  // namespace

GdnTrainResult train_gdn(const std::vector<GraspRecord>& train_successes,
                         const std::vector<GraspRecord>& val_successes, GdnVariant variant,
                         const TrainConfig& config, GqnModel* init_from) {
  if (train_successes.empty()) throw std::invalid_argument("train_gdn: empty training data");
  for (const GraspRecord& r : train_successes)
    if (!r.success) throw std::invalid_argument("train_gdn: data must pass successful_only");

  GdnTrainResult result{init_from ? init_gdn_from_gqn(*init_from, variant, config.seed)
                                  : GdnModel(variant, config.seed),
                        {},
                        Eigen::Vector4d::Zero()};
  GdnModel& model = result.model;
  const bool with_var = variant_has_variance(variant);

  const auto train_records =
      maybe_subsample(train_successes, config.max_samples, hash_seed(config.seed, 32));
  PackedGdnData data = pack_gdn(train_records, model);

  // Patch observations get the same pi-periodicity augmentation as the GQN;
  // full-image observations are unchanged by the relabeling, so skip them.
  std::vector<Image> twins;
  if (variant_uses_patch(variant)) {
    const std::size_t base = data.images.size();
    twins.reserve(base);
    for (std::size_t i = 0; i < base; ++i) twins.push_back(rot180(*data.images[i]));
    for (std::size_t i = 0; i < base; ++i) {
      data.images.push_back(&twins[i]);
      data.actions.push_back(data.actions[i]);
      data.targets.push_back(data.targets[i]);
    }
  }

  OptimizerState opt;
  opt.learning_rate = config.learning_rate;
  opt.decay = config.lr_decay;
  auto params = model.net.parameters();

  const std::size_t n = data.images.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(n, hash_seed(config.seed, 200 + epoch));
    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const long bn = static_cast<long>(end - begin);
      std::vector<const Image*> images;
      std::vector<Eigen::VectorXd> actions;
      Tensor target({bn, 4});
      for (std::size_t i = begin; i < end; ++i) {
        images.push_back(data.images[order[i]]);
        actions.push_back(data.actions[order[i]]);
        for (long j = 0; j < 4; ++j)
          target.values[static_cast<long>(i - begin) * 4 + j] = data.targets[order[i]][j];
      }
      Tensor img = pack_images(images, 0, images.size());
      Tensor act = pack_rows(actions, 0, actions.size());
      model.net.zero_grad();
      Tensor h = model.net.forward(img, act, /*training=*/true);
      Tensor mu({bn, 4});
      Tensor lv({bn, 4});
      const long hd = h.shape[1];
      for (long s = 0; s < bn; ++s) {
        for (long j = 0; j < 4; ++j) {
          mu.values[s * 4 + j] = h.values[s * hd + j];
          lv.values[s * 4 + j] = with_var ? h.values[s * hd + 4 + j] : 0.0;
        }
      }
      NllResult loss = gaussian_nll_loss(mu, lv, target);
      Tensor dh({bn, hd});
      for (long s = 0; s < bn; ++s) {
        for (long j = 0; j < 4; ++j) {
          dh.values[s * hd + j] = loss.dmu.values[s * 4 + j];
          if (with_var) dh.values[s * hd + 4 + j] = loss.dlog_var.values[s * 4 + j];
        }
      }
      model.net.backward(dh);
      rmsprop_step(params, opt);
      epoch_loss += loss.loss;
      ++batches;
    }
    EpochMetric m;
    m.epoch = epoch;
    m.loss = batches ? epoch_loss / batches : 0.0;
    m.train_metric = gdn_rmse(model, train_records).mean();
    m.val_metric = val_successes.empty() ? 0.0 : gdn_rmse(model, val_successes).mean();
    result.history.push_back(m);
  }
  result.val_rmse = gdn_rmse(model, val_successes);
  return result;
}

// ---------------------------------------------------------------------------
// LOWESS

void LowessModel::add(std::uint64_t part_id, const Grasp& grasp, const Displacement& dg) {
  memory_[part_id].push_back(
      {Eigen::Vector4d(grasp.gx, grasp.gy, grasp.gz, grasp.gtheta), dg.vec()});
}

LowessModel LowessModel::from_records(const std::vector<GraspRecord>& records) {
  LowessModel model;
  for (const GraspRecord& r : records)
    if (r.success) model.add(r.part_id, r.grasp, r.grasp_displacement);
  return model;
}

Eigen::Vector4d LowessModel::predict(std::uint64_t part_id, const Grasp& query) const {
  const auto it = memory_.find(part_id);
  if (it == memory_.end() || it->second.empty())
    throw UnknownObjectError("LOWESS has no stored grasps for part " + std::to_string(part_id));
  const Eigen::Vector4d q(query.gx, query.gy, query.gz, query.gtheta);

  double weight_sum = 0.0;
  Eigen::Vector4d weighted = Eigen::Vector4d::Zero();
  double best_exponent = std::numeric_limits<double>::infinity();
  const Entry* nearest = nullptr;
  for (const Entry& e : it->second) {
    Eigen::Vector4d d = q - e.grasp;
    d[3] = wrap_angle(d[3]);
    double exponent = 0.0;
    for (int j = 0; j < 4; ++j) exponent += d[j] * d[j] / kKernelDiag[j];
    const double w = std::exp(-0.5 * exponent);
    weight_sum += w;
    weighted += w * e.dg;
    if (exponent < best_exponent) {
      best_exponent = exponent;
      nearest = &e;
    }
  }
  if (weight_sum < 1e-300) return nearest->dg;  // far-query degeneracy
  return weighted / weight_sum;
}

}  // namespace pgrasp
