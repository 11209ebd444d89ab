#include "gtn/transfer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gtn/grad_check.hpp"
#include "gtn/rng.hpp"
#include "gtn/tensor.hpp"

using namespace gtn;

namespace {

void zero_params(TransferModule& tm) {
  for (ParamRef p : tm.params()) std::fill(p.value->values().begin(), p.value->values().end(), 0.0);
}

// Straight-line scalar reimplementation of the eval-mode gate chain:
// gate = sigmoid(W2 relu(W1 x + b1) + b2), y = gate * x (or F + x).
struct ScalarOracle {
  std::vector<std::vector<double>> w1, w2;
  std::vector<double> b1, b2;
  bool apply_sigmoid = true;
  bool residual = false;

  static ScalarOracle from(TransferModule& tm, bool residual, bool apply_sigmoid) {
    ScalarOracle o;
    o.residual = residual;
    o.apply_sigmoid = apply_sigmoid;
    const Tensor& w1 = tm.fc1().weight();
    const Tensor& w2 = tm.fc2().weight();
    o.w1.assign(w1.dim(0), std::vector<double>(w1.dim(1)));
    for (std::size_t i = 0; i < w1.dim(0); ++i)
      for (std::size_t j = 0; j < w1.dim(1); ++j) o.w1[i][j] = w1.at(i, j);
    o.w2.assign(w2.dim(0), std::vector<double>(w2.dim(1)));
    for (std::size_t i = 0; i < w2.dim(0); ++i)
      for (std::size_t j = 0; j < w2.dim(1); ++j) o.w2[i][j] = w2.at(i, j);
    o.b1.assign(w1.dim(0), 0.0);
    o.b2.assign(w2.dim(0), 0.0);
    if (tm.fc1().with_bias()) {
      for (std::size_t i = 0; i < w1.dim(0); ++i) o.b1[i] = tm.fc1().bias()[i];
      for (std::size_t i = 0; i < w2.dim(0); ++i) o.b2[i] = tm.fc2().bias()[i];
    }
    return o;
  }

  void eval(const std::vector<double>& x, std::vector<double>& y,
            std::vector<double>& gate) const {
    const std::size_t hidden = w1.size(), channels = w2.size();
    std::vector<double> h(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      double a = b1[j];
      for (std::size_t i = 0; i < x.size(); ++i) a += w1[j][i] * x[i];
      h[j] = a > 0.0 ? a : 0.0;
    }
    y.resize(channels);
    gate.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      double a = b2[c];
      for (std::size_t j = 0; j < hidden; ++j) a += w2[c][j] * h[j];
      const double g = apply_sigmoid ? 1.0 / (1.0 + std::exp(-a)) : a;
      gate[c] = g;
      y[c] = residual ? g + x[c] : g * x[c];
    }
  }
};

}  // namespace

TEST(TransferModule, ZeroParametersGateIsHalf) {
  Rng rng(1);
  TransferModule tm({.channels = 6, .reduction = 2}, rng);
  zero_params(tm);
  Tensor x = rand_uniform(rng, {3, 6}, -2.0, 2.0);
  auto out = tm.forward(x, Mode::kEval);
  for (std::size_t i = 0; i < out.gate.size(); ++i) {
    EXPECT_EQ(out.gate[i], 0.5);
    EXPECT_EQ(out.y[i], 0.5 * x[i]);
  }
}

TEST(TransferModule, IdentityVariantIsBitExact) {
  Rng rng(2);
  TransferModule tm({.channels = 8, .reduction = 4, .variant = GateVariant::kIdentity}, rng);
  Tensor x = rand_uniform(rng, {4, 8}, -3.0, 3.0);
  auto out = tm.forward(x, Mode::kTrain);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(out.y[i], x[i]);
    EXPECT_EQ(out.gate[i], 1.0);
  }
  Tensor dy = rand_uniform(rng, {4, 8}, -1.0, 1.0);
  Tensor dx = tm.backward(dy);
  for (std::size_t i = 0; i < dy.size(); ++i) EXPECT_EQ(dx[i], dy[i]);
}

TEST(TransferModule, MatchesScalarOracleSeed11) {
  Rng rng(11);
  TransferModule tm({.channels = 16, .reduction = 4}, rng.split("init"));
  Tensor x = rand_uniform(rng, {5, 16}, -2.0, 2.0);
  auto out = tm.forward(x, Mode::kEval);
  auto oracle = ScalarOracle::from(tm, /*residual=*/false, /*apply_sigmoid=*/true);
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<double> xb(16), y, gate;
    for (std::size_t c = 0; c < 16; ++c) xb[c] = x.at(b, c);
    oracle.eval(xb, y, gate);
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_NEAR(out.y.at(b, c), y[c], 1e-12);
      EXPECT_NEAR(out.gate.at(b, c), gate[c], 1e-12);
    }
  }
}

TEST(TransferModule, GradCheckEvalMode) {
  Rng rng(3);
  TransferModule tm({.channels = 12, .reduction = 3}, rng.split("init"));
  Tensor x = grad_check_input(rng, {4, 12});
  tm.zero_grad();
  auto out = tm.forward(x, Mode::kEval);
  Tensor probe = rand_uniform(rng, out.y.shape(), -1.0, 1.0);
  Tensor dx = tm.backward(probe);
  std::vector<GradTarget> targets{{"input", &x, dx}};
  for (ParamRef p : tm.params()) targets.push_back({p.name, p.value, *p.grad});
  auto loss = [&]() { return sum(mul(tm.forward(x, Mode::kEval).y, probe)); };
  EXPECT_LT(grad_check_targets(loss, targets).max_rel_error, 1e-6);
}

TEST(TransferModule, ZeroUpstreamGradientGivesZeroParamGrads) {
  Rng rng(4);
  TransferModule tm({.channels = 6, .reduction = 2}, rng.split("init"));
  Tensor x = rand_uniform(rng, {3, 6}, -1.0, 1.0);
  tm.zero_grad();
  tm.forward(x, Mode::kEval);
  tm.backward(Tensor({3, 6}));
  for (ParamRef p : tm.params()) {
    for (double v : p.grad->values()) EXPECT_EQ(v, 0.0) << p.name;
  }
}

TEST(TransferModule, BackwardBeforeForwardThrows) {
  Rng rng(5);
  TransferModule tm({.channels = 4, .reduction = 2}, rng);
  EXPECT_THROW(tm.backward(Tensor({2, 4})), StateError);
}

TEST(TransferModule, ChannelMismatchThrows) {
  Rng rng(6);
  TransferModule tm({.channels = 4, .reduction = 2}, rng);
  EXPECT_THROW(tm.forward(Tensor({2, 5}), Mode::kEval), ShapeError);
}

TEST(TransferModule, ResidualZeroParamsAddsHalf) {
  Rng rng(7);
  TransferModule tm({.channels = 5, .reduction = 2, .variant = GateVariant::kResidual}, rng);
  zero_params(tm);
  Tensor x = rand_uniform(rng, {2, 5}, -1.0, 1.0);
  auto out = tm.forward(x, Mode::kEval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.y[i], x[i] + 0.5);
}

TEST(TransferModule, SigmoidFreeResidualWithZeroHeadIsIdentity) {
  Rng rng(8);
  TransferModule tm({.channels = 5,
                     .reduction = 2,
                     .variant = GateVariant::kResidual,
                     .residual_sigmoid = false},
                    rng);
  // zero the output projection only: F collapses to 0, so y = x
  std::fill(tm.fc2().weight().values().begin(), tm.fc2().weight().values().end(), 0.0);
  std::fill(tm.fc2().bias().values().begin(), tm.fc2().bias().values().end(), 0.0);
  Tensor x = rand_uniform(rng, {3, 5}, -1.0, 1.0);
  auto out = tm.forward(x, Mode::kEval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.y[i], x[i]);
}

TEST(TransferModule, ResidualMatchesScalarOracleSeed13) {
  for (bool with_sigmoid : {true, false}) {
    Rng rng(13);
    TransferModule tm({.channels = 10,
                       .reduction = 4,
                       .variant = GateVariant::kResidual,
                       .residual_sigmoid = with_sigmoid},
                      rng.split("init"));
    Tensor x = rand_uniform(rng, {4, 10}, -2.0, 2.0);
    auto out = tm.forward(x, Mode::kEval);
    auto oracle = ScalarOracle::from(tm, /*residual=*/true, with_sigmoid);
    for (std::size_t b = 0; b < 4; ++b) {
      std::vector<double> xb(10), y, gate;
      for (std::size_t c = 0; c < 10; ++c) xb[c] = x.at(b, c);
      oracle.eval(xb, y, gate);
      for (std::size_t c = 0; c < 10; ++c) EXPECT_NEAR(out.y.at(b, c), y[c], 1e-12);
    }
  }
}

TEST(TransferModule, ResidualGradCheckBothHeads) {
  for (bool with_sigmoid : {true, false}) {
    Rng rng(14);
    TransferModule tm({.channels = 8,
                       .reduction = 2,
                       .variant = GateVariant::kResidual,
                       .residual_sigmoid = with_sigmoid},
                      rng.split("init"));
    Tensor x = grad_check_input(rng, {3, 8});
    tm.zero_grad();
    auto out = tm.forward(x, Mode::kEval);
    Tensor probe = rand_uniform(rng, out.y.shape(), -1.0, 1.0);
    Tensor dx = tm.backward(probe);
    std::vector<GradTarget> targets{{"input", &x, dx}};
    for (ParamRef p : tm.params()) targets.push_back({p.name, p.value, *p.grad});
    auto loss = [&]() { return sum(mul(tm.forward(x, Mode::kEval).y, probe)); };
    EXPECT_LT(grad_check_targets(loss, targets).max_rel_error, 1e-6)
        << "residual_sigmoid=" << with_sigmoid;
  }
}

TEST(TransferModule, EvalGatesStayInUnitIntervalProperty) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t channels = 1 + rng.index(24);
    const std::size_t reduction = 1 + rng.index(20);
    TransferModule tm({.channels = channels, .reduction = reduction}, rng.split(trial));
    // widen the parameter scale beyond init to probe saturation
    const double s = rng.uniform(0.5, 20.0);
    for (ParamRef p : tm.params())
      for (double& v : p.value->values()) v *= s;
    Tensor x = rand_uniform(rng, {2, channels}, -50.0, 50.0);
    auto out = tm.forward(x, Mode::kEval);
    for (double g : out.gate.values()) {
      ASSERT_GE(g, 0.0);
      ASSERT_LE(g, 1.0);
    }
  }
}

TEST(TransferModule, TrainGatesMayExceedOneViaInvertedDropout) {
  Rng rng(16);
  TransferModule tm({.channels = 16, .reduction = 2, .p1 = 0.0, .p2 = 0.5}, rng.split("init"));
  // saturate the sigmoid so kept gates are ~1 and the 1/(1-p2)=2 rescale shows
  for (ParamRef p : tm.params())
    for (double& v : p.value->values()) v = 5.0;
  Tensor x = Tensor::full({8, 16}, 1.0);
  auto out = tm.forward(x, Mode::kTrain);
  double mx = 0.0;
  for (double g : out.gate.values()) mx = std::max(mx, g);
  EXPECT_GT(mx, 1.0);
}

TEST(TransferModule, HiddenWidthAndParamCountGrid) {
  // ceiling division, floor of one unit
  EXPECT_EQ(TransferModule::hidden_width(2048, 16), 128u);
  EXPECT_EQ(TransferModule::hidden_width(10, 16), 1u);
  EXPECT_EQ(TransferModule::hidden_width(17, 16), 2u);
  const std::size_t cs[] = {1, 7, 10, 16, 100, 128, 2048};
  const std::size_t rs[] = {1, 3, 4, 16, 32};
  for (std::size_t c : cs) {
    for (std::size_t r : rs) {
      for (bool bias : {true, false}) {
        Rng rng(c * 31 + r);
        TransferModule tm({.channels = c, .reduction = r, .with_bias = bias}, rng);
        std::size_t actual = 0;
        for (ParamRef p : tm.params()) actual += p.value->size();
        EXPECT_EQ(actual, TransferModule::param_count(c, r, bias))
            << "C=" << c << " r=" << r << " bias=" << bias;
      }
    }
  }
}

TEST(TransferModule, GatedOutputBoundedByInputButResidualIsNot) {
  Rng rng(17);
  bool residual_violates = false;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t channels = 4 + rng.index(12);
    Tensor x = rand_uniform(rng, {3, channels}, -5.0, 5.0);
    double xmax = 0.0;
    for (double v : x.values()) xmax = std::max(xmax, std::abs(v));

    TransferModule gated({.channels = channels, .reduction = 4}, rng.split(2 * trial));
    auto gout = gated.forward(x, Mode::kEval);
    double ymax = 0.0;
    for (double v : gout.y.values()) ymax = std::max(ymax, std::abs(v));
    EXPECT_LE(ymax, xmax);

    TransferModule res(
        {.channels = channels, .reduction = 4, .variant = GateVariant::kResidual},
        rng.split(2 * trial + 1));
    auto rout = res.forward(x, Mode::kEval);
    double rmax = 0.0;
    for (double v : rout.y.values()) rmax = std::max(rmax, std::abs(v));
    if (rmax > xmax) residual_violates = true;
  }
  EXPECT_TRUE(residual_violates);
}
