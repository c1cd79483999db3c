#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgrasp {

struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CorruptFileError : std::runtime_error {
  CorruptFileError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Dense n-dimensional array, row-major, 64-bit values, with an optional
// same-shape gradient buffer.
struct Tensor {
  std::vector<long> shape;
  Eigen::ArrayXd values;
  Eigen::ArrayXd grad;  // size 0 when absent

  Tensor() = default;
  explicit Tensor(std::vector<long> s) : shape(std::move(s)) {
    values = Eigen::ArrayXd::Zero(count(shape));
  }
  Tensor(std::vector<long> s, Eigen::ArrayXd v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != count(shape)) throw ShapeError("value count does not match shape");
  }

  static long count(const std::vector<long>& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
  }

  long size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad = Eigen::ArrayXd::Zero(values.size());
  }
  void zero_grad() {
    if (grad.size()) grad.setZero();
  }
};

void check_finite(const Tensor& t, const char* what);

struct Parameter {
  std::string name;
  Tensor value;  // value.grad accumulates gradients
};

// ---------------------------------------------------------------------------
// Layers. forward() caches whatever backward() needs; backward() returns the
// input gradient and accumulates into parameter grads.

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
};

// Cross-correlation, square kernel, symmetric zero padding. Input [N,C,H,W].
class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         std::uint64_t init_seed);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  int out_size(int in_size) const { return (in_size + 2 * pad_ - kernel_) / stride_ + 1; }

 private:
  int in_c_, out_c_, kernel_, stride_, pad_;
  Parameter weight_;  // [out_c, in_c*k*k]
  Parameter bias_;    // [out_c]
  Tensor x_cache_;
};

class Dense : public Layer {
 public:
  Dense(std::string name, int in_dim, int out_dim, std::uint64_t init_seed);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  int in_dim_, out_dim_;
  Parameter weight_;  // [out, in]
  Parameter bias_;    // [out]
  Tensor x_cache_;
  std::vector<long> in_shape_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_cache_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor y_cache_;
};

// Inverted dropout: scales by 1/(1-rate) in training, identity in eval.
// Mask sequence is deterministic per (seed, call index).
class Dropout : public Layer {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), seed_(seed) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  void reset_calls() { calls_ = 0; }

 private:
  double rate_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
  bool active_ = false;
  Eigen::ArrayXd mask_;
};

// ---------------------------------------------------------------------------
// Losses. Batch reduction is the mean over samples.

struct BceResult {
  double loss = 0.0;
  Tensor dq;  // gradient w.r.t. predictions
};
// predictions q in (0,1) (clamped to [1e-7, 1-1e-7]), labels in {0,1}; both [N,1].
BceResult bce_loss(const Tensor& q, const Tensor& labels);

struct NllResult {
  double loss = 0.0;
  Tensor dmu;
  Tensor dlog_var;
};
// Per-sample sum_j [log sigma_j^2 + (target_j - mu_j)^2 / sigma_j^2], with
// log-variance clamped to [-12, 6]; no 1/2 factors.
NllResult gaussian_nll_loss(const Tensor& mu, const Tensor& log_var, const Tensor& target);

constexpr double kLogVarMin = -12.0;
constexpr double kLogVarMax = 6.0;

// ---------------------------------------------------------------------------
// RMSProp with learning-rate decay: lr_t = lr / (1 + decay * step).

struct OptimizerState {
  double learning_rate = 1e-5;
  double decay = 1e-6;
  double rho = 0.9;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Eigen::ArrayXd> accumulators;  // one per parameter, lazily sized
};

void rmsprop_step(std::vector<Parameter*> params, OptimizerState& state);

// ---------------------------------------------------------------------------
// Two-branch network shared by the GQN and GDN heads:
//   image:  conv 5x5x16 s2 - relu - conv 5x5x32 s2 - relu - conv 3x3x64 s2 -
//           relu - flatten - fc 128 - relu
//   action: fc 16 - relu
//   merge:  concat - fc 64 - relu - dropout 0.5 - fc head
struct NetConfig {
  int image_size = 64;
  int in_channels = 1;
  int conv_channels[3] = {16, 32, 64};
  int conv_kernels[3] = {5, 5, 3};
  int conv_pads[3] = {2, 2, 1};
  int conv_stride = 2;
  int image_fc = 128;
  int action_fc = 16;
  int merge_fc = 64;
  int action_dim = 3;
  int head_dim = 1;
  double dropout_rate = 0.5;
  std::uint64_t init_seed = 1;
  std::uint64_t dropout_seed = 2;
};

class TwoBranchNet {
 public:
  explicit TwoBranchNet(const NetConfig& config);

  // image [N, C*H*W] (or [N,C,H,W]), action [N, action_dim] -> [N, head_dim].
  Tensor forward(const Tensor& image, const Tensor& action, bool training);
  // dhead [N, head_dim]; accumulates parameter gradients.
  void backward(const Tensor& dhead);

  std::vector<Parameter*> parameters();
  long parameter_count();
  void zero_grad();
  const NetConfig& config() const { return config_; }
  Dropout& dropout() { return *dropout_; }

 private:
  NetConfig config_;
  std::vector<std::unique_ptr<Layer>> image_trunk_;
  std::vector<std::unique_ptr<Layer>> action_branch_;
  std::vector<std::unique_ptr<Layer>> merge_head_;
  Dropout* dropout_ = nullptr;
  long image_feat_ = 0;
  long batch_ = 0;
};

// Documented parameter count for the fixed architecture above.
long expected_parameter_count(int action_dim, int head_dim);

// ---------------------------------------------------------------------------
// Gradient checking: central finite differences over every parameter entry,
// dropout forced to eval mode. Returns the max relative error.
enum class GradCheckLoss { kBce, kGaussianNll };
double grad_check(TwoBranchNet& net, const Tensor& image, const Tensor& action,
                  const Tensor& target, GradCheckLoss loss, double epsilon = 1e-5);

// ---------------------------------------------------------------------------
// "PGWT" checkpoint container, little-endian.
void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);
void load_checkpoint_into(const std::string& path, std::vector<Parameter*> params);

}  // namespace pgrasp
