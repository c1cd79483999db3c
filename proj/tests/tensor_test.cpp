#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "pgrasp/rng.hpp"
#include "pgrasp/tensor.hpp"
#include "test_support.hpp"

using namespace pgrasp;
using namespace pgrasp::testing;

namespace {

Tensor random_tensor(std::vector<long> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t.values[i] = rng.uniform(-scale, scale);
  return t;
}

// Direct quadruple-loop cross-correlation over [N,C,H,W].
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, int k,
                      int stride, int pad, int out_c) {
  const long n = x.shape[0], c = x.shape[1], h = x.shape[2], width = x.shape[3];
  const long oh = (h + 2 * pad - k) / stride + 1;
  const long ow = (width + 2 * pad - k) / stride + 1;
  Tensor y({n, out_c, oh, ow});
  for (long s = 0; s < n; ++s)
    for (long oc = 0; oc < out_c; ++oc)
      for (long i = 0; i < oh; ++i)
        for (long j = 0; j < ow; ++j) {
          double acc = b.values[oc];
          for (long ic = 0; ic < c; ++ic)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const long yi = i * stride + ki - pad;
                const long xj = j * stride + kj - pad;
                if (yi < 0 || yi >= h || xj < 0 || xj >= width) continue;
                acc += x.values[((s * c + ic) * h + yi) * width + xj] *
                       w.values[(oc * c + ic) * k * k + ki * k + kj];
              }
          y.values[((s * out_c + oc) * oh + i) * ow + j] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d with a 1x1 identity filter reproduces the input") {
  Conv2d conv("c", 1, 1, 1, 1, 0, 3);
  Parameter* w = conv.parameters()[0];
  Parameter* b = conv.parameters()[1];
  w->value.values.setConstant(1.0);
  b->value.values.setConstant(0.0);
  Rng rng(1);
  const Tensor x = random_tensor({2, 1, 5, 5}, rng);
  const Tensor y = conv.forward(x, false);
  REQUIRE(y.shape == x.shape);
  CHECK((y.values - x.values).abs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d impulse response of an all-ones 3x3 filter") {
  Conv2d conv("c", 1, 1, 3, 1, 1, 3);
  conv.parameters()[0]->value.values.setConstant(1.0);
  conv.parameters()[1]->value.values.setConstant(0.0);
  Tensor x({1, 1, 7, 7});
  x.values[3 * 7 + 3] = 1.0;  // one-hot at the center
  const Tensor y = conv.forward(x, false);
  int ones = 0;
  for (long i = 0; i < 7; ++i)
    for (long j = 0; j < 7; ++j) {
      const double v = y.values[i * 7 + j];
      const bool inside = std::abs(i - 3) <= 1 && std::abs(j - 3) <= 1;
      CHECK(v == (inside ? 1.0 : 0.0));
      ones += inside;
    }
  CHECK(ones == 9);
}

TEST_CASE("conv2d matches the brute-force reference on random cases") {
  Rng rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    const int k = trial % 2 == 0 ? 3 : 5;
    const int stride = 1 + trial % 2;
    const int pad = trial % 3;
    Conv2d conv("c", 2, 3, k, stride, pad, 10 + trial);
    const Tensor x = random_tensor({2, 2, 9, 9}, rng);
    const Tensor y = conv.forward(x, false);
    const Tensor ref = conv_reference(x, conv.parameters()[0]->value,
                                      conv.parameters()[1]->value, k, stride, pad, 3);
    REQUIRE(y.shape == ref.shape);
    CHECK((y.values - ref.values).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv2d rejects shape mismatches") {
  Conv2d conv("c", 2, 3, 3, 1, 1, 9);
  Tensor wrong({1, 1, 8, 8});
  CHECK_THROWS_AS(conv.forward(wrong, false), ShapeError);
}

TEST_CASE("dense layer equals an explicit matrix product and round-trips shape") {
  Dense dense("d", 6, 4, 5);
  Rng rng(2);
  const Tensor x = random_tensor({3, 6}, rng);
  const Tensor y = dense.forward(x, false);
  const Parameter* w = dense.parameters()[0];
  const Parameter* b = dense.parameters()[1];
  for (long s = 0; s < 3; ++s)
    for (long o = 0; o < 4; ++o) {
      double acc = b->value.values[o];
      for (long i = 0; i < 6; ++i)
        acc += w->value.values[o * 6 + i] * x.values[s * 6 + i];
      CHECK(y.values[s * 4 + o] == doctest::Approx(acc).epsilon(1e-12));
    }

  // Conv-shaped input flattens on the way in; the input gradient restores it.
  Dense dense2("d2", 2 * 2 * 3, 4, 6);
  const Tensor img = random_tensor({2, 3, 2, 2}, rng);
  Tensor out = dense2.forward(img, true);
  Tensor dy(out.shape);
  dy.values.setConstant(1.0);
  const Tensor dx = dense2.backward(dy);
  CHECK(dx.shape == img.shape);
}

TEST_CASE("activation and dropout basics") {
  ReLU relu;
  Tensor x({1, 4}, (Eigen::ArrayXd(4) << -1.0, 0.0, 2.0, -0.5).finished());
  const Tensor y = relu.forward(x, false);
  CHECK(y.values[0] == 0.0);
  CHECK(y.values[2] == 2.0);

  Sigmoid sig;
  Tensor zero({1, 1});
  CHECK(sig.forward(zero, false).values[0] == doctest::Approx(0.5).epsilon(1e-15));

  Dropout drop(0.5, 123);
  Rng rng(4);
  const Tensor in = random_tensor({1, 64}, rng);
  const Tensor eval_out = drop.forward(in, false);
  CHECK((eval_out.values - in.values).abs().maxCoeff() == 0.0);  // eval identity

  // Monte-Carlo expectation of inverted dropout recovers the input.
  Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(64);
  const int reps = 10000;
  for (int i = 0; i < reps; ++i) mean += drop.forward(in, true).values;
  mean /= reps;
  CHECK((mean - in.values).abs().maxCoeff() < 0.02 * in.values.abs().maxCoeff() + 0.02);

  // Same layer re-seeded reproduces its mask sequence.
  Dropout a(0.5, 9), b(0.5, 9);
  const Tensor m1 = a.forward(in, true);
  const Tensor m2 = b.forward(in, true);
  CHECK((m1.values - m2.values).abs().maxCoeff() == 0.0);
}

TEST_CASE("bce_loss values and finite-difference gradient") {
  Tensor q({1, 1}, (Eigen::ArrayXd(1) << 0.5).finished());
  Tensor s1({1, 1}, (Eigen::ArrayXd(1) << 1.0).finished());
  Tensor s0({1, 1}, (Eigen::ArrayXd(1) << 0.0).finished());
  CHECK(bce_loss(q, s1).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(q, s0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Perfect predictions cost at most the clamp bound.
  Tensor perfect({2, 1}, (Eigen::ArrayXd(2) << 1.0, 0.0).finished());
  Tensor labels({2, 1}, (Eigen::ArrayXd(2) << 1.0, 0.0).finished());
  CHECK(bce_loss(perfect, labels).loss <= -std::log(1.0 - 1e-7) + 1e-15);

  Rng rng(8);
  Tensor pred({5, 1});
  Tensor lab({5, 1});
  for (int i = 0; i < 5; ++i) {
    pred.values[i] = rng.uniform(0.05, 0.95);
    lab.values[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  const BceResult res = bce_loss(pred, lab);
  const double eps = 1e-7;
  for (int i = 0; i < 5; ++i) {
    Tensor hi = pred, lo = pred;
    hi.values[i] += eps;
    lo.values[i] -= eps;
    const double num = (bce_loss(hi, lab).loss - bce_loss(lo, lab).loss) / (2 * eps);
    CHECK(res.dq.values[i] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("gaussian_nll_loss closed forms") {
  auto scalar_loss = [](double mu, double log_var, double target) {
    Tensor m({1, 1}, (Eigen::ArrayXd(1) << mu).finished());
    Tensor lv({1, 1}, (Eigen::ArrayXd(1) << log_var).finished());
    Tensor t({1, 1}, (Eigen::ArrayXd(1) << target).finished());
    return gaussian_nll_loss(m, lv, t).loss;
  };
  CHECK(scalar_loss(0.0, 0.0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(scalar_loss(0.0, 0.0, 2.0) == doctest::Approx(4.0).epsilon(1e-12));

  // Fixed residual r: the minimum over sigma^2 sits at sigma^2 = r^2 with
  // value log r^2 + 1.
  const double r = 0.37;
  const double best_lv = std::log(r * r);
  const double best = scalar_loss(0.0, best_lv, r);
  CHECK(best == doctest::Approx(std::log(r * r) + 1.0).epsilon(1e-12));
  for (double dlv : {-0.8, -0.1, 0.1, 0.9})
    CHECK(scalar_loss(0.0, best_lv + dlv, r) > best);

  // Analytic gradients on a batch.
  Rng rng(6);
  Tensor mu({3, 4}), lv({3, 4}), tg({3, 4});
  for (long i = 0; i < 12; ++i) {
    mu.values[i] = rng.uniform(-1, 1);
    lv.values[i] = rng.uniform(-2, 2);
    tg.values[i] = rng.uniform(-1, 1);
  }
  const NllResult res = gaussian_nll_loss(mu, lv, tg);
  const double eps = 1e-6;
  for (long i = 0; i < 12; ++i) {
    Tensor hi = mu, lo = mu;
    hi.values[i] += eps;
    lo.values[i] -= eps;
    const double dmu = (gaussian_nll_loss(hi, lv, tg).loss -
                        gaussian_nll_loss(lo, lv, tg).loss) / (2 * eps);
    CHECK(res.dmu.values[i] == doctest::Approx(dmu).epsilon(1e-5));
    Tensor lhi = lv, llo = lv;
    lhi.values[i] += eps;
    llo.values[i] -= eps;
    const double dlv = (gaussian_nll_loss(mu, lhi, tg).loss -
                        gaussian_nll_loss(mu, llo, tg).loss) / (2 * eps);
    CHECK(res.dlog_var.values[i] == doctest::Approx(dlv).epsilon(1e-5));
  }

  Tensor bad = mu;
  bad.values[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gaussian_nll_loss(bad, lv, tg), NumericFault);
}

TEST_CASE("rmsprop_step hand-evaluated updates") {
  Parameter p;
  p.name = "w";
  p.value = Tensor({1});
  p.value.values[0] = 1.0;
  p.value.ensure_grad();

  OptimizerState state;
  state.learning_rate = 0.01;
  state.decay = 0.5;

  // Zero gradient leaves the parameter unchanged.
  rmsprop_step({&p}, state);
  CHECK(p.value.values[0] == 1.0);

  // Constant gradient g: first effective step is -lr * g / sqrt((1-rho)g^2 + eps)
  // (accumulator already advanced once by the zero-grad step above, so reset).
  Parameter q;
  q.name = "w2";
  q.value = Tensor({1});
  q.value.values[0] = 2.0;
  q.value.ensure_grad();
  const double g = 0.3;
  q.value.grad[0] = g;
  OptimizerState fresh;
  fresh.learning_rate = 0.01;
  fresh.decay = 0.0;
  rmsprop_step({&q}, fresh);
  const double expected =
      2.0 - 0.01 * g / std::sqrt((1.0 - fresh.rho) * g * g + fresh.epsilon);
  CHECK(q.value.values[0] == doctest::Approx(expected).epsilon(1e-12));

  // Learning rate decays strictly with the step counter.
  double prev_lr = 0.01;
  for (long step = 1; step <= 5; ++step) {
    const double lr_t = 0.01 / (1.0 + 0.5 * step);
    CHECK(lr_t < prev_lr);
    prev_lr = lr_t;
  }
}

TEST_CASE("parameter count matches the documented closed form") {
  NetConfig config;
  config.action_dim = 3;
  config.head_dim = 1;
  TwoBranchNet gqn_shape(config);
  CHECK(gqn_shape.parameter_count() == expected_parameter_count(3, 1));

  config.action_dim = 4;
  config.head_dim = 8;
  TwoBranchNet ocfi_mv(config);
  CHECK(ocfi_mv.parameter_count() == expected_parameter_count(4, 8));
}

TEST_CASE("grad_check on a purely linear single layer is near machine precision") {
  // A lone Dense layer is exactly linear, so central differences are exact
  // up to rounding.
  Dense dense("lin", 3, 2, 11);
  Rng rng(12);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor target = random_tensor({4, 2}, rng);
  Tensor lv({4, 2});
  const double eps = 1e-5;
  Tensor out = dense.forward(x, false);
  NllResult res = gaussian_nll_loss(out, lv, target);
  for (Parameter* p : dense.parameters()) p->value.ensure_grad();
  dense.backward(res.dmu);
  double worst = 0.0;
  for (Parameter* p : dense.parameters()) {
    for (long i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.values[i];
      p->value.values[i] = keep + eps;
      const double hi = gaussian_nll_loss(dense.forward(x, false), lv, target).loss;
      p->value.values[i] = keep - eps;
      const double lo = gaussian_nll_loss(dense.forward(x, false), lv, target).loss;
      p->value.values[i] = keep;
      const double num = (hi - lo) / (2 * eps);
      const double ana = p->value.grad[i];
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("grad_check passes on shrunken two-branch networks") {
  NetConfig config;
  config.image_size = 16;
  config.conv_channels[0] = 4;
  config.conv_channels[1] = 6;
  config.conv_channels[2] = 8;
  config.image_fc = 16;
  config.action_fc = 8;
  config.merge_fc = 16;
  config.init_seed = 21;

  Rng rng(13);
  auto make_batch = [&](int action_dim, int head_dim) {
    Tensor image({2, 1, 16, 16});
    for (long i = 0; i < image.size(); ++i) image.values[i] = rng.uniform(-1, 1);
    Tensor action({2, action_dim});
    for (long i = 0; i < action.size(); ++i) action.values[i] = rng.uniform(-1, 1);
    Tensor target({2, head_dim});
    for (long i = 0; i < target.size(); ++i)
      target.values[i] = head_dim == 1 ? (i % 2 ? 1.0 : 0.0) : rng.uniform(-1, 1);
    return std::tuple(image, action, target);
  };

  {
    config.action_dim = 3;
    config.head_dim = 1;
    TwoBranchNet net(config);
    auto [image, action, target] = make_batch(3, 1);
    CHECK(grad_check(net, image, action, target, GradCheckLoss::kBce) < 1e-4);
  }
  {
    config.action_dim = 4;
    config.head_dim = 8;
    TwoBranchNet net(config);
    // Fresh stream: finite differences need activations clear of ReLU kinks.
    rng = Rng(99);
    auto [image, action, target] = make_batch(4, 4);
    CHECK(grad_check(net, image, action, target, GradCheckLoss::kGaussianNll) < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly and detect corruption") {
  NetConfig config;
  config.image_size = 16;
  config.conv_channels[0] = 4;
  config.conv_channels[1] = 6;
  config.conv_channels[2] = 8;
  config.image_fc = 16;
  config.action_fc = 8;
  config.merge_fc = 16;
  TwoBranchNet net(config);

  const std::string path = temp_path("net.pgwt");
  save_checkpoint(path, net.parameters());

  TwoBranchNet other(config);
  // Perturb, then reload: every parameter must be restored bit-exactly.
  for (Parameter* p : other.parameters()) p->value.values += 0.25;
  load_checkpoint_into(path, other.parameters());
  auto a = net.parameters();
  auto b = other.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK((a[i]->value.values == b[i]->value.values).all());
  }

  const std::map<std::string, Tensor> table = load_checkpoint(path);
  CHECK(table.size() == a.size());

  // Truncated file reports an offset.
  std::ifstream in(path, std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(in), {});
  bytes.resize(bytes.size() - 10);
  const std::string trunc = temp_path("net_trunc.pgwt");
  std::ofstream(trunc, std::ios::binary) << bytes;
  bool threw = false;
  try {
    load_checkpoint(trunc);
  } catch (const CorruptFileError& e) {
    threw = true;
    CHECK(e.offset > 0);
  }
  CHECK(threw);
}
