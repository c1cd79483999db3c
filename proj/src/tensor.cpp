#include "pgrasp/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pgrasp/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace pgrasp {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowConst = Eigen::Map<const RowMat>;

void check_finite(const Tensor& t, const char* what) {
  if (!t.values.allFinite()) throw NumericFault(std::string("non-finite values in ") + what);
}

namespace {

Tensor he_normal(std::string_view, std::vector<long> shape, long fan_in, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long i = 0; i < t.size(); ++i) t.values[i] = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               int pad, std::uint64_t init_seed)
    : in_c_(in_channels), out_c_(out_channels), kernel_(kernel), stride_(stride), pad_(pad) {
  const long k2 = static_cast<long>(kernel) * kernel;
  weight_.name = name + ".weight";
  weight_.value = he_normal(weight_.name, {out_channels, in_channels * k2},
                            in_channels * k2, init_seed);
  bias_.name = name + ".bias";
  bias_.value = Tensor({out_channels});
  weight_.value.ensure_grad();
  bias_.value.ensure_grad();
}

namespace {

// cols is (C*k*k) x (oh*ow) for one sample.
void im2col(const double* x, int c_in, int h, int w, int kernel, int stride, int pad,
            int oh, int ow, Eigen::MatrixXd& cols) {
  cols.setZero();
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const int row = (c * kernel + ki) * kernel + kj;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= w) continue;
            cols(row, oi * ow + oj) = x[(c * h + ii) * w + jj];
          }
        }
      }
    }
  }
}

void col2im_add(const Eigen::MatrixXd& cols, int c_in, int h, int w, int kernel, int stride,
                int pad, int oh, int ow, double* dx) {
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const int row = (c * kernel + ki) * kernel + kj;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= w) continue;
            dx[(c * h + ii) * w + jj] += cols(row, oi * ow + oj);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, bool) {
  if (x.shape.size() != 4 || x.shape[1] != in_c_)
    throw ShapeError("conv2d: expected input [N, in_c, H, W]");
  x_cache_ = x;
  const long n = x.shape[0];
  const int h = static_cast<int>(x.shape[2]);
  const int w = static_cast<int>(x.shape[3]);
  const int oh = out_size(h);
  const int ow = out_size(w);
  const long k2 = static_cast<long>(kernel_) * kernel_;
  Tensor y({n, out_c_, oh, ow});
  MapRowConst wm(weight_.value.values.data(), out_c_, in_c_ * k2);
  Eigen::MatrixXd cols(in_c_ * k2, oh * ow);
  for (long s = 0; s < n; ++s) {
    im2col(x.values.data() + s * in_c_ * h * w, in_c_, h, w, kernel_, stride_, pad_, oh, ow,
           cols);
    MapRow ym(y.values.data() + s * static_cast<long>(out_c_) * oh * ow, out_c_, oh * ow);
    ym.noalias() = wm * cols;
    ym.colwise() +=
        Eigen::Map<const Eigen::VectorXd>(bias_.value.values.data(), out_c_);
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const long n = x.shape[0];
  const int h = static_cast<int>(x.shape[2]);
  const int w = static_cast<int>(x.shape[3]);
  const int oh = out_size(h);
  const int ow = out_size(w);
  const long k2 = static_cast<long>(kernel_) * kernel_;
  if (dy.shape != std::vector<long>({n, out_c_, oh, ow}))
    throw ShapeError("conv2d backward: gradient shape mismatch");

  Tensor dx(x.shape);
  MapRowConst wm(weight_.value.values.data(), out_c_, in_c_ * k2);
  MapRow dwm(weight_.value.grad.data(), out_c_, in_c_ * k2);
  Eigen::Map<Eigen::VectorXd> dbm(bias_.value.grad.data(), out_c_);
  Eigen::MatrixXd cols(in_c_ * k2, oh * ow);
  Eigen::MatrixXd dcols(in_c_ * k2, oh * ow);
  for (long s = 0; s < n; ++s) {
    im2col(x.values.data() + s * in_c_ * h * w, in_c_, h, w, kernel_, stride_, pad_, oh, ow,
           cols);
    MapRowConst dym(dy.values.data() + s * static_cast<long>(out_c_) * oh * ow, out_c_,
                    oh * ow);
    dwm.noalias() += dym * cols.transpose();
    dbm.noalias() += dym.rowwise().sum();
    dcols.noalias() = wm.transpose() * dym;
    col2im_add(dcols, in_c_, h, w, kernel_, stride_, pad_, oh, ow,
               dx.values.data() + s * in_c_ * h * w);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, int in_dim, int out_dim, std::uint64_t init_seed)
    : in_dim_(in_dim), out_dim_(out_dim) {
  weight_.name = name + ".weight";
  weight_.value = he_normal(weight_.name, {out_dim, in_dim}, in_dim, init_seed);
  bias_.name = name + ".bias";
  bias_.value = Tensor({out_dim});
  weight_.value.ensure_grad();
  bias_.value.ensure_grad();
}

Tensor Dense::forward(const Tensor& x, bool) {
  if (x.size() % in_dim_ != 0) throw ShapeError("dense: input size not divisible by in_dim");
  const long n = x.size() / in_dim_;
  in_shape_ = x.shape;
  Tensor flat = x;
  flat.shape = {n, in_dim_};
  x_cache_ = flat;
  Tensor y({n, out_dim_});
  MapRowConst xm(flat.values.data(), n, in_dim_);
  MapRowConst wm(weight_.value.values.data(), out_dim_, in_dim_);
  MapRow ym(y.values.data(), n, out_dim_);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() +=
      Eigen::Map<const Eigen::VectorXd>(bias_.value.values.data(), out_dim_).transpose();
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  const long n = x_cache_.shape[0];
  if (dy.shape != std::vector<long>({n, out_dim_}))
    throw ShapeError("dense backward: gradient shape mismatch");
  Tensor dx(x_cache_.shape);
  MapRowConst xm(x_cache_.values.data(), n, in_dim_);
  MapRowConst wm(weight_.value.values.data(), out_dim_, in_dim_);
  MapRowConst dym(dy.values.data(), n, out_dim_);
  MapRow dwm(weight_.value.grad.data(), out_dim_, in_dim_);
  MapRow dxm(dx.values.data(), n, in_dim_);
  dwm.noalias() += dym.transpose() * xm;
  Eigen::Map<Eigen::VectorXd>(bias_.value.grad.data(), out_dim_).noalias() +=
      dym.colwise().sum().transpose();
  dxm.noalias() = dym * wm;
  dx.shape = in_shape_;  // undo the flatten so conv layers upstream see [N,C,H,W]
  return dx;
}

// ---------------------------------------------------------------------------
// Activations and dropout

Tensor ReLU::forward(const Tensor& x, bool) {
  x_cache_ = x;
  Tensor y = x;
  y.values = x.values.max(0.0);
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  dx.values = (x_cache_.values > 0.0).select(dy.values, 0.0);
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
  Tensor y = x;
  y.values = 1.0 / (1.0 + (-x.values).exp());
  y_cache_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
  Tensor dx = dy;
  dx.values = dy.values * y_cache_.values * (1.0 - y_cache_.values);
  return dx;
}

Tensor Dropout::forward(const Tensor& x, bool training) {
  active_ = training && rate_ > 0.0;
  if (!active_) return x;
  Rng rng(hash_seed(seed_, calls_++));
  mask_.resize(x.size());
  const double scale = 1.0 / (1.0 - rate_);
  for (long i = 0; i < x.size(); ++i) mask_[i] = rng.uniform() >= rate_ ? scale : 0.0;
  Tensor y = x;
  y.values *= mask_;
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (!active_) return dy;
  Tensor dx = dy;
  dx.values *= mask_;
  return dx;
}

// ---------------------------------------------------------------------------
// Losses

BceResult bce_loss(const Tensor& q, const Tensor& labels) {
  if (q.shape != labels.shape) throw ShapeError("bce_loss: shape mismatch");
  check_finite(q, "bce_loss predictions");
  const long n = q.size();
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  BceResult out;
  out.dq = Tensor(q.shape);
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    const double s = labels.values[i];
    const double qc = std::clamp(q.values[i], lo, hi);
    total += -(s * std::log(qc) + (1.0 - s) * std::log(1.0 - qc));
    const bool interior = q.values[i] > lo && q.values[i] < hi;
    out.dq.values[i] = interior ? (qc - s) / (qc * (1.0 - qc)) / n : 0.0;
  }
  out.loss = total / n;
  return out;
}

NllResult gaussian_nll_loss(const Tensor& mu, const Tensor& log_var, const Tensor& target) {
  if (mu.shape != log_var.shape || mu.shape != target.shape)
    throw ShapeError("gaussian_nll_loss: shape mismatch");
  check_finite(mu, "gaussian_nll_loss mu");
  check_finite(log_var, "gaussian_nll_loss log_var");
  check_finite(target, "gaussian_nll_loss target");
  const long n_samples = mu.shape.empty() ? 1 : mu.shape[0];
  NllResult out;
  out.dmu = Tensor(mu.shape);
  out.dlog_var = Tensor(mu.shape);
  double total = 0.0;
  for (long i = 0; i < mu.size(); ++i) {
    const double lv = std::clamp(log_var.values[i], kLogVarMin, kLogVarMax);
    const double var = std::exp(lv);
    const double r = target.values[i] - mu.values[i];
    total += lv + r * r / var;
    out.dmu.values[i] = -2.0 * r / var / n_samples;
    const bool interior = log_var.values[i] > kLogVarMin && log_var.values[i] < kLogVarMax;
    out.dlog_var.values[i] = interior ? (1.0 - r * r / var) / n_samples : 0.0;
  }
  out.loss = total / n_samples;
  return out;
}

// ---------------------------------------------------------------------------
// RMSProp

void rmsprop_step(std::vector<Parameter*> params, OptimizerState& state) {
  if (state.accumulators.empty()) {
    for (const Parameter* p : params)
      state.accumulators.emplace_back(Eigen::ArrayXd::Zero(p->value.size()));
  }
  if (state.accumulators.size() != params.size())
    throw ShapeError("rmsprop_step: optimizer state does not match parameter list");
  const double lr_t = state.learning_rate / (1.0 + state.decay * state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i]->value;
    t.ensure_grad();
    Eigen::ArrayXd& acc = state.accumulators[i];
    if (acc.size() != t.size())
      throw ShapeError("rmsprop_step: accumulator shape mismatch for " + params[i]->name);
    acc = state.rho * acc + (1.0 - state.rho) * t.grad.square();
    t.values -= lr_t * t.grad / (acc + state.epsilon).sqrt();
  }
  ++state.step;
}

// ---------------------------------------------------------------------------
// TwoBranchNet

TwoBranchNet::TwoBranchNet(const NetConfig& config) : config_(config) {
  const NetConfig& c = config_;
  std::uint64_t s = c.init_seed;
  auto next_seed = [&s]() { return s = mix64(s + 0x51ed27f1ULL); };

  int size = c.image_size;
  int channels = c.in_channels;
  for (int i = 0; i < 3; ++i) {
    image_trunk_.push_back(std::make_unique<Conv2d>("conv" + std::to_string(i + 1), channels,
                                                    c.conv_channels[i], c.conv_kernels[i],
                                                    c.conv_stride, c.conv_pads[i], next_seed()));
    image_trunk_.push_back(std::make_unique<ReLU>());
    size = (size + 2 * c.conv_pads[i] - c.conv_kernels[i]) / c.conv_stride + 1;
    channels = c.conv_channels[i];
  }
  const long conv_feat = static_cast<long>(channels) * size * size;
  image_trunk_.push_back(
      std::make_unique<Dense>("image_fc", static_cast<int>(conv_feat), c.image_fc, next_seed()));
  image_trunk_.push_back(std::make_unique<ReLU>());
  image_feat_ = c.image_fc;

  action_branch_.push_back(
      std::make_unique<Dense>("action_fc", c.action_dim, c.action_fc, next_seed()));
  action_branch_.push_back(std::make_unique<ReLU>());

  merge_head_.push_back(std::make_unique<Dense>("merge_fc", c.image_fc + c.action_fc,
                                                c.merge_fc, next_seed()));
  merge_head_.push_back(std::make_unique<ReLU>());
  auto dropout = std::make_unique<Dropout>(c.dropout_rate, c.dropout_seed);
  dropout_ = dropout.get();
  merge_head_.push_back(std::move(dropout));
  merge_head_.push_back(std::make_unique<Dense>("head", c.merge_fc, c.head_dim, next_seed()));
}

Tensor TwoBranchNet::forward(const Tensor& image, const Tensor& action, bool training) {
  const NetConfig& c = config_;
  const long pixels = static_cast<long>(c.in_channels) * c.image_size * c.image_size;
  if (image.size() % pixels != 0) throw ShapeError("image size does not match the network");
  batch_ = image.size() / pixels;
  if (action.shape != std::vector<long>({batch_, c.action_dim}))
    throw ShapeError("action tensor must be [N, action_dim]");

  Tensor x = image;
  x.shape = {batch_, c.in_channels, c.image_size, c.image_size};
  for (auto& layer : image_trunk_) x = layer->forward(x, training);

  Tensor a = action;
  for (auto& layer : action_branch_) a = layer->forward(a, training);

  Tensor merged({batch_, image_feat_ + c.action_fc});
  MapRow mm(merged.values.data(), batch_, image_feat_ + c.action_fc);
  mm.leftCols(image_feat_) = MapRowConst(x.values.data(), batch_, image_feat_);
  mm.rightCols(c.action_fc) = MapRowConst(a.values.data(), batch_, c.action_fc);

  Tensor h = merged;
  for (auto& layer : merge_head_) h = layer->forward(h, training);
  check_finite(h, "network output");
  return h;
}

void TwoBranchNet::backward(const Tensor& dhead) {
  Tensor d = dhead;
  for (auto it = merge_head_.rbegin(); it != merge_head_.rend(); ++it) d = (*it)->backward(d);

  const NetConfig& c = config_;
  Tensor dimg({batch_, image_feat_});
  Tensor dact({batch_, static_cast<long>(c.action_fc)});
  MapRowConst dm(d.values.data(), batch_, image_feat_ + c.action_fc);
  MapRow(dimg.values.data(), batch_, image_feat_) = dm.leftCols(image_feat_);
  MapRow(dact.values.data(), batch_, c.action_fc) = dm.rightCols(c.action_fc);

  Tensor g = dimg;
  for (auto it = image_trunk_.rbegin(); it != image_trunk_.rend(); ++it) g = (*it)->backward(g);
  Tensor ga = dact;
  for (auto it = action_branch_.rbegin(); it != action_branch_.rend(); ++it)
    ga = (*it)->backward(ga);
}

std::vector<Parameter*> TwoBranchNet::parameters() {
  std::vector<Parameter*> out;
  for (auto* group : {&image_trunk_, &action_branch_, &merge_head_})
    for (auto& layer : *group)
      for (Parameter* p : layer->parameters()) out.push_back(p);
  return out;
}

long TwoBranchNet::parameter_count() {
  long n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

void TwoBranchNet::zero_grad() {
  for (Parameter* p : parameters()) {
    p->value.ensure_grad();
    p->value.zero_grad();
  }
}

long expected_parameter_count(int action_dim, int head_dim) {
  const long conv = 16 * (1 * 25) + 16 + 32 * (16 * 25) + 32 + 64 * (32 * 9) + 64;
  const long image_fc = 128L * (64 * 8 * 8) + 128;
  const long action_fc = 16L * action_dim + 16;
  const long merge = 64L * (128 + 16) + 64;
  const long head = static_cast<long>(head_dim) * 64 + head_dim;
  return conv + image_fc + action_fc + merge + head;
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double loss_through_net(TwoBranchNet& net, const Tensor& image, const Tensor& action,
                        const Tensor& target, GradCheckLoss kind, Tensor* dhead_out) {
  Tensor h = net.forward(image, action, /*training=*/false);
  if (kind == GradCheckLoss::kBce) {
    Tensor q = h;
    q.values = 1.0 / (1.0 + (-h.values).exp());
    BceResult r = bce_loss(q, target);
    if (dhead_out) {
      *dhead_out = h;
      dhead_out->values = r.dq.values * q.values * (1.0 - q.values);
    }
    return r.loss;
  }
  const long n = h.shape[0];
  const long d = h.shape[1] / 2;
  Tensor mu({n, d}), lv({n, d});
  MapRowConst hm(h.values.data(), n, 2 * d);
  MapRow(mu.values.data(), n, d) = hm.leftCols(d);
  MapRow(lv.values.data(), n, d) = hm.rightCols(d);
  NllResult r = gaussian_nll_loss(mu, lv, target);
  if (dhead_out) {
    *dhead_out = Tensor({n, 2 * d});
    MapRow dm(dhead_out->values.data(), n, 2 * d);
    dm.leftCols(d) = MapRowConst(r.dmu.values.data(), n, d);
    dm.rightCols(d) = MapRowConst(r.dlog_var.values.data(), n, d);
  }
  return r.loss;
}

}  // namespace

double grad_check(TwoBranchNet& net, const Tensor& image, const Tensor& action,
                  const Tensor& target, GradCheckLoss loss, double epsilon) {
  net.zero_grad();
  Tensor dhead;
  loss_through_net(net, image, action, target, loss, &dhead);
  net.backward(dhead);

  double max_rel = 0.0;
  for (Parameter* p : net.parameters()) {
    for (long i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.values[i];
      p->value.values[i] = saved + epsilon;
      const double lp = loss_through_net(net, image, action, target, loss, nullptr);
      p->value.values[i] = saved - epsilon;
      const double lm = loss_through_net(net, image, action, target, loss, nullptr);
      p->value.values[i] = saved;
      const double fd = (lp - lm) / (2.0 * epsilon);
      const double analytic = p->value.grad[i];
      const double denom = std::max(std::abs(fd) + std::abs(analytic), 1e-8);
      max_rel = std::max(max_rel, std::abs(fd - analytic) / denom);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kWeightMagic[4] = {'P', 'G', 'W', 'T'};
constexpr std::uint16_t kWeightVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, std::size_t& offset, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CorruptFileError(std::string("truncated checkpoint while reading ") + what,
                                  offset);
  offset += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kWeightMagic, 4);
  write_pod(out, kWeightVersion);
  write_pod(out, static_cast<std::uint64_t>(params.size()));
  for (const Parameter* p : params) {
    write_pod(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(out, static_cast<std::uint32_t>(p->value.shape.size()));
    for (long d : p->value.shape) write_pod(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(p->value.values.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::size_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightMagic, 4) != 0)
    throw CorruptFileError("bad checkpoint magic", 0);
  offset += 4;
  const auto version = read_pod<std::uint16_t>(in, offset, "version");
  if (version != kWeightVersion)
    throw CorruptFileError("unsupported checkpoint version", offset - sizeof(std::uint16_t));
  const auto count = read_pod<std::uint64_t>(in, offset, "parameter count");
  std::map<std::string, Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, offset, "name length");
    if (name_len > 4096) throw CorruptFileError("implausible parameter name length",
                                                offset - sizeof(std::uint32_t));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CorruptFileError("truncated checkpoint while reading name", offset);
    offset += name_len;
    const auto ndim = read_pod<std::uint32_t>(in, offset, "rank");
    if (ndim > 8) throw CorruptFileError("implausible tensor rank", offset - sizeof(std::uint32_t));
    std::vector<long> shape(ndim);
    for (auto& d : shape) d = static_cast<long>(read_pod<std::int64_t>(in, offset, "dimension"));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw CorruptFileError("truncated checkpoint payload", offset);
    offset += static_cast<std::size_t>(t.size()) * sizeof(double);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void load_checkpoint_into(const std::string& path, std::vector<Parameter*> params) {
  auto table = load_checkpoint(path);
  for (Parameter* p : params) {
    auto it = table.find(p->name);
    if (it == table.end())
      throw std::runtime_error("checkpoint is missing parameter: " + p->name);
    if (it->second.shape != p->value.shape)
      throw ShapeError("checkpoint shape mismatch for " + p->name);
    p->value.values = it->second.values;
  }
}

}  // namespace pgrasp
