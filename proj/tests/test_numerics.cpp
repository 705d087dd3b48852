#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "objtx/errors.hpp"
#include "objtx/numerics/gradcheck.hpp"
#include "objtx/numerics/ops.hpp"
#include "objtx/numerics/optim.hpp"
#include "objtx/numerics/rng.hpp"

using namespace objtx;
using namespace objtx::num;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor<double> t(Shape{r, c});
  for (auto& x : t.data()) x = normal(rng);
  return t;
}

// Standard normal CDF by composite Simpson integration of the density.
double phi_quadrature(double x) {
  const int n = 2000;
  const double h = x / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double s = pdf(0.0) + pdf(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 0.5 + s * h / 3.0;
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Graph<double> g;
  auto b = Tensor<double>::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  auto out = matmul(g.constant(Tensor<double>::matrix(2, 2, {1, 0, 0, 1})), g.constant(b));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out.value()[i], b[i]);
}

TEST(Matmul, SmallCase) {
  Graph<double> g;
  auto out = matmul(g.constant(Tensor<double>::matrix(2, 2, {1, 2, 3, 4})),
                    g.constant(Tensor<double>::matrix(2, 1, {0, 1})));
  EXPECT_EQ(out.value()(0, 0), 2.0);
  EXPECT_EQ(out.value()(1, 0), 4.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  auto a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
  Graph<double> g;
  auto out = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(out(i, j), s, 1e-12);
    }
  auto nt = matmul_nt(g.constant(a), g.constant(random_matrix(4, 7, rng))).value();
  EXPECT_EQ(nt.rows(), 5u);
  EXPECT_EQ(nt.cols(), 4u);
}

TEST(Matmul, ZeroAnnihilates) {
  Rng rng(1);
  Graph<double> g;
  auto out = matmul(g.constant(random_matrix(3, 4, rng)), g.constant(Tensor<double>(Shape{4, 2}))).value();
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Graph<double> g;
  EXPECT_THROW(matmul(g.constant(Tensor<double>(Shape{2, 3})), g.constant(Tensor<double>(Shape{2, 3}))),
               DimensionError);
}

TEST(Softmax, UniformOnConstantRow) {
  Graph<double> g;
  auto out = softmax(g.constant(Tensor<double>::matrix(1, 3, {4, 4, 4}))).value();
  for (double x : out.data()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ClosedForm) {
  Graph<double> g;
  auto out = softmax(g.constant(Tensor<double>::matrix(1, 2, {0.0, std::log(2.0)}))).value();
  EXPECT_NEAR(out[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(out[1], 2.0 / 3.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_matrix(4, 6, rng);
    auto shifted = x;
    for (auto& v : shifted.data()) v += 17.25;
    Graph<double> g;
    auto a = softmax(g.constant(x)).value();
    auto b = softmax(g.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += a(r, c);
        EXPECT_NEAR(a(r, c), b(r, c), 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, MaskedKeysGetZeroWeight) {
  Graph<double> g;
  const std::vector<std::uint8_t> mask{1, 0, 1};
  auto out = masked_softmax(g.constant(Tensor<double>::matrix(1, 3, {0, 50, 0})), mask).value();
  EXPECT_EQ(out[1], 0.0);
  EXPECT_NEAR(out[0], 0.5, 1e-15);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  Graph<double> g;
  auto out = layer_norm(g.constant(Tensor<double>::matrix(1, 4, {3, 3, 3, 3})),
                        g.constant(Tensor<double>(Shape{4}, 1.0)), g.constant(Tensor<double>(Shape{4})))
                 .value();
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(LayerNorm, PopulationStatistics) {
  Graph<double> g;
  auto out = layer_norm(g.constant(Tensor<double>::matrix(1, 2, {1, 3})), g.constant(Tensor<double>(Shape{2}, 1.0)),
                        g.constant(Tensor<double>(Shape{2})))
                 .value();
  EXPECT_NEAR(out[0], -1.0, 1e-9);
  EXPECT_NEAR(out[1], 1.0, 1e-9);
}

TEST(LayerNorm, ZeroGammaRecoversBeta) {
  Rng rng(2);
  Graph<double> g;
  auto beta = Tensor<double>(Shape{3}, std::vector<double>{0.5, -2, 7});
  auto out =
      layer_norm(g.constant(random_matrix(2, 3, rng)), g.constant(Tensor<double>(Shape{3})), g.constant(beta)).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out(r, c), beta[c]);
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(kernel::gelu(0.0), 0.0);
  EXPECT_NEAR(kernel::gelu(10.0), 10.0, 1e-6);
  const double oracle = 1.0 * phi_quadrature(1.0);
  EXPECT_NEAR(oracle, 0.841345, 1e-6);
  EXPECT_NEAR(kernel::gelu(1.0), oracle, 1e-9);
  EXPECT_NEAR(kernel::gelu(-1.5), -1.5 * phi_quadrature(-1.5), 1e-9);
}

TEST(Dropout, IdentityInEvalModeOrAtRateZero) {
  Rng rng(5), drop(9);
  auto x = random_matrix(3, 4, rng);
  Graph<double> g;
  auto a = dropout(g.constant(x), 0.1, Mode::kEval, drop).value();
  auto b = dropout(g.constant(x), 0.0, Mode::kTrain, drop).value();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(a[i], x[i]);
    EXPECT_EQ(b[i], x[i]);
  }
}

TEST(Dropout, KeptFractionConcentrates) {
  Rng drop(11);
  Graph<float> g;
  auto out = dropout(g.constant(Tensor<float>(Shape{1000, 1000}, 1.0f)), 0.1, Mode::kTrain, drop).value();
  std::size_t kept = 0;
  for (float x : out.data()) {
    if (x != 0.0f) {
      ++kept;
      EXPECT_NEAR(x, 1.0f / 0.9f, 1e-6f);
    }
  }
  EXPECT_NEAR(kept / 1e6, 0.9, 0.003);
}

TEST(Backward, SquareAtThree) {
  ParamRegistry<double> reg;
  reg.add("x", Shape{1}, false);
  reg[0].value[0] = 3.0;
  Graph<double> g;
  auto x = g.param(reg[0]);
  g.backward(sum(mul(x, x)));
  EXPECT_EQ(reg[0].grad[0], 6.0);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  ParamRegistry<double> reg;
  reg.add("x", Shape{2, 2}, false);
  Graph<double> g;
  g.param(reg[0]);
  auto c = g.constant(Tensor<double>(Shape{1}, 5.0));
  g.backward(sum(c));
  for (double v : reg[0].grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SharedLeafAccumulates) {
  ParamRegistry<double> reg;
  reg.add("x", Shape{1}, false);
  reg[0].value[0] = 2.0;
  Graph<double> g;
  auto x = g.param(reg[0]);
  g.backward(sum(add(mul(x, x), scale(x, 3.0))));  // d/dx (x^2 + 3x) = 2x + 3
  EXPECT_EQ(reg[0].grad[0], 7.0);
}

TEST(Gradcheck, DetectsABrokenGradient) {
  // A loss whose recorded backward is wrong on purpose must fail the check.
  ParamRegistry<double> reg;
  reg.add("x", Shape{3}, false);
  Rng rng(4);
  for (auto& v : reg[0].value.data()) v = normal(rng);
  auto report = gradcheck<double>(reg, [&](Graph<double>& g) {
    auto x = g.param(reg[0]);
    Tensor<double> v(Shape{1});
    for (double e : x.value().data()) v[0] += e * e;
    return g.record(v, {x.id}, [x](Graph<double>& gr, std::size_t self) {
      auto& gx = gr.grad(x.id);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gr.grad(self)[0] * 3.0 * gr.value(x.id)[i];
    });
  });
  EXPECT_FALSE(report.passed);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  ParamRegistry<double> reg;
  reg.add("w", Shape{3}, false);
  reg[0].value = Tensor<double>(Shape{3}, std::vector<double>{1.0, -2.0, 0.5});
  reg[0].grad = Tensor<double>(Shape{3}, std::vector<double>{0.3, -4.0, 1e-3});
  AdamState<double> st(reg, 0.0);
  const double lr = 1e-3;
  adam_step(reg, st, lr);
  // At t=1 the bias-corrected moments are g and g^2.
  const double before[] = {1.0, -2.0, 0.5}, grad[] = {0.3, -4.0, 1e-3};
  for (int i = 0; i < 3; ++i) {
    const double expected = before[i] - lr * grad[i] / (std::abs(grad[i]) + 1e-8);
    EXPECT_NEAR(reg[0].value[i], expected, 1e-15);
    EXPECT_NEAR(std::abs(reg[0].value[i] - before[i]), lr, 1e-7);
  }
}

TEST(Adam, ZeroGradientWithoutDecayIsANoOp) {
  ParamRegistry<double> reg;
  reg.add("w", Shape{2}, true);
  reg[0].value = Tensor<double>(Shape{2}, std::vector<double>{1.5, -3.0});
  AdamState<double> st(reg, 0.0);
  adam_step(reg, st, 0.1);
  EXPECT_EQ(reg[0].value[0], 1.5);
  EXPECT_EQ(reg[0].value[1], -3.0);
}

TEST(Adam, DecoupledDecayScalesParameters) {
  ParamRegistry<double> reg;
  reg.add("w", Shape{2}, true);
  reg.add("b", Shape{2}, false);
  reg[0].value = Tensor<double>(Shape{2}, std::vector<double>{2.0, -4.0});
  reg[1].value = Tensor<double>(Shape{2}, std::vector<double>{2.0, -4.0});
  AdamState<double> st(reg, 0.01);
  adam_step(reg, st, 1e-4);
  EXPECT_NEAR(reg[0].value[0], 2.0 * (1.0 - 1e-6), 1e-15);
  EXPECT_NEAR(reg[0].value[1], -4.0 * (1.0 - 1e-6), 1e-15);
  EXPECT_EQ(reg[1].value[0], 2.0);  // not flagged for decay
}

TEST(Adam, FrozenParametersAreSkipped) {
  ParamRegistry<double> reg;
  reg.add("w", Shape{1}, true);
  reg[0].value[0] = 1.0;
  reg[0].grad[0] = 1.0;
  reg[0].trainable = false;
  AdamState<double> st(reg);
  adam_step(reg, st, 0.1);
  EXPECT_EQ(reg[0].value[0], 1.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, BitReproducible) {
  auto run = [] {
    ParamRegistry<float> reg;
    reg.add("w", Shape{4, 4}, true);
    Rng rng(21);
    for (auto& v : reg[0].value.data()) v = float(normal(rng));
    AdamState<float> st(reg);
    for (int s = 0; s < 20; ++s) {
      for (auto& v : reg[0].grad.data()) v = float(normal(rng));
      adam_step(reg, st, 1e-2);
    }
    return std::vector<float>(reg[0].value.data().begin(), reg[0].value.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(LrSchedule, Landmarks) {
  EXPECT_EQ(lr_schedule(0, 1000, 1e-4), 0.0);
  EXPECT_NEAR(lr_schedule(100, 1000, 1e-4), 1e-4, 1e-18);
  EXPECT_NEAR(lr_schedule(550, 1000, 1e-4), 0.5e-4, 1e-18);
  EXPECT_EQ(lr_schedule(1000, 1000, 1e-4), 0.0);
  EXPECT_THROW(lr_schedule(1001, 1000, 1e-4), UsageError);
}

TEST(LrSchedule, ContinuousPiecewiseLinearWithPeakAtWarmupEnd) {
  const std::uint64_t total = 500;
  double peak = -1.0;
  std::uint64_t argpeak = 0;
  for (std::uint64_t s = 0; s <= total; ++s) {
    const double lr = lr_schedule(s, total, 1.0);
    if (lr > peak) peak = lr, argpeak = s;
    if (s > 0) EXPECT_LE(std::abs(lr - lr_schedule(s - 1, total, 1.0)), 1.0 / 50.0 + 1e-12);
    if (s >= 2 && s != 51 && s != 50) {
      // Second differences vanish away from the kink.
      const double d2 = lr - 2 * lr_schedule(s - 1, total, 1.0) + lr_schedule(s - 2, total, 1.0);
      EXPECT_NEAR(d2, 0.0, 1e-12);
    }
  }
  EXPECT_EQ(argpeak, 50u);
  EXPECT_NEAR(peak, 1.0, 1e-15);
}

TEST(Seeds, StreamsAreIndependentByName) {
  SeedSequence s(42);
  EXPECT_NE(s.derive("mask"), s.derive("batch"));
  EXPECT_NE(s.derive("mask", 0), s.derive("mask", 1));
  Rng a = s.stream("mask");
  Rng other = s.stream("dropout");
  for (int i = 0; i < 100; ++i) other();  // consuming one stream
  Rng b = s.stream("mask");               // leaves another untouched
  EXPECT_EQ(a(), b());
  EXPECT_EQ(SeedSequence(42).derive("init"), SeedSequence(42).derive("init"));
}

TEST(Seeds, TruncatedNormalStaysWithinTwoSigma) {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double x = truncated_normal(rng, 0.02);
    EXPECT_LE(std::abs(x), 0.04);
  }
}
