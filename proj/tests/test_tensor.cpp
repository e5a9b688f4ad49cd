#include <cmath>
#include <iostream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ictd/adam.hpp"
#include "ictd/grad_check.hpp"
#include "ictd/nn.hpp"
#include "ictd/ops.hpp"
#include "composite_nets.hpp"
#include "op_functions.hpp"

using namespace ictd;
using ictd::testing::mean_sq;
using ictd::testing::per_op_functions;
using ictd::testing::per_op_inputs;
using ictd::testing::randn;

namespace {

template <class T>
double inner(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a.data()[i]) * b.data()[i];
  return s;
}

}  // namespace

TEST(Conv2d, ScaledIdentityKernel) {
  auto tape = Tape::inference();
  auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w({1, 1, 1, 1}, {2.0f});
  auto y = conv2d(tape, x, w, Tensor(), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 2.0f);
}

TEST(Conv2d, HandArithmetic) {
  auto tape = Tape::inference();
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = conv2d(tape, x, w, Tensor(), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 5.0f);
}

TEST(Conv2d, StridedPaddedShape) {
  auto tape = Tape::inference();
  auto y = conv2d(tape, Tensor::zeros({2, 3, 16, 16}), Tensor::zeros({8, 3, 3, 3}), Tensor(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 8, 8}));
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  auto tape = Tape::inference();
  EXPECT_THROW(conv2d(tape, Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 4, 3, 3}), Tensor(), 1, 1),
               dimension_error);
  EXPECT_THROW(conv2d(tape, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor(), 1, 1),
               dimension_error);
}

TEST(ConvTranspose2d, UpsampleShape) {
  auto tape = Tape::inference();
  auto y = conv_transpose2d(tape, Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({4, 2, 4, 4}), Tensor(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 16, 16}));
}

TEST(ConvTranspose2d, UnitKernelIsIdentity) {
  auto tape = Tape::inference();
  Tensor x({1, 1, 1, 1}, {0.75f});
  Tensor w({1, 1, 1, 1}, {1.0f});
  auto y = conv_transpose2d(tape, x, w, Tensor(), 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.item(), 0.75f);
}

TEST(ConvTranspose2d, ChannelMismatchIsDimensionError) {
  auto tape = Tape::inference();
  EXPECT_THROW(conv_transpose2d(tape, Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 3, 4, 4}), Tensor(), 2, 1),
               dimension_error);
}

// <conv2d(x, w), y> == <x, conv_transpose2d(y, w)> on random instances.
TEST(ConvTranspose2d, AdjointOfConv2d) {
  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(2), cin = 1 + rng.index(3), cout = 1 + rng.index(3);
    const std::size_t k = 1 + rng.index(4), stride = 1 + rng.index(2), pad = rng.index(k);
    // Only geometries where the transpose reproduces the input extent exactly.
    std::size_t h = k + rng.index(6), w = k + rng.index(6);
    while ((h + 2 * pad - k) % stride != 0) ++h;
    while ((w + 2 * pad - k) % stride != 0) ++w;
    auto x = randn<float>({n, cin, h, w}, rng);
    auto wt = randn<float>({cout, cin, k, k}, rng);
    auto tape = Tape::inference();
    auto y = conv2d(tape, x, wt, Tensor(), stride, pad);
    auto v = randn<float>(y.shape(), rng);
    auto xt = conv_transpose2d(tape, v, wt, Tensor(), stride, pad);
    ASSERT_EQ(xt.shape(), x.shape());
    const double lhs = inner(y, v);
    const double rhs = inner(x, xt);
    EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(lhs))) << "trial " << trial;
  }
}

TEST(InstanceNorm, ConstantChannelMapsToZero) {
  auto tape = Tape::inference();
  auto y = instance_norm(tape, Tensor::full({1, 1, 4, 4}, 3.0f), Tensor::full({1}, 1.0f),
                         Tensor::zeros({1}), 1e-5f);
  for (float v : y.data()) EXPECT_LE(std::abs(v), 1e-6f);
}

TEST(InstanceNorm, TwoValueChannel) {
  auto tape = Tape64::inference();
  Tensor64 x({1, 1, 1, 2}, {1.0, 3.0});
  auto y = instance_norm(tape, x, Tensor64::full({1}, 1.0), Tensor64::zeros({1}), 1e-12);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-9);
}

TEST(InstanceNorm, ZeroGammaGivesBeta) {
  Rng rng(7);
  auto tape = Tape::inference();
  Tensor beta({2}, {0.25f, -0.5f});
  auto y = instance_norm(tape, randn<float>({3, 2, 4, 5}, rng), Tensor::zeros({2}), beta, 1e-5f);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], beta.data()[(i / 20) % 2]);
}

TEST(Elementwise, PointwiseValues) {
  auto tape = Tape::inference();
  Tensor x({3}, {-1.0f, 0.0f, 2.0f});
  auto r = relu(tape, x);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{0, 0, 2}));
  EXPECT_FLOAT_EQ(leaky_relu(tape, Tensor({1}, {-2.0f}), 0.01f).item(), -0.02f);
  EXPECT_EQ(ictd::tanh(tape, Tensor({1}, {0.0f})).item(), 0.0f);
  EXPECT_EQ(ictd::abs(tape, Tensor({1}, {-1.5f})).item(), 1.5f);
  EXPECT_EQ(scalar_mul(tape, Tensor({1}, {1.5f}), 2.0f).item(), 3.0f);
}

TEST(Elementwise, BinaryShapeMismatch) {
  auto tape = Tape::inference();
  EXPECT_THROW(add(tape, Tensor::zeros({2}), Tensor::zeros({3})), dimension_error);
  EXPECT_THROW(mul(tape, Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), dimension_error);
}

TEST(Elementwise, TanhStaysStrictlyInsideUnitInterval) {
  auto tape = Tape::inference();
  auto y = ictd::tanh(tape, Tensor({2}, {50.0f, -50.0f}));
  EXPECT_LT(y.data()[0], 1.0f);
  EXPECT_GT(y.data()[1], -1.0f);
}

TEST(Elementwise, AbsSubgradientZeroAtZero) {
  Tape tape;
  auto x = Tensor({3}, {0.0f, 2.0f, -2.0f}, true);
  auto loss = sum(tape, ictd::abs(tape, x));
  backward(loss, tape);
  EXPECT_EQ(x.grad()[0], 0.0f);
  EXPECT_EQ(x.grad()[1], 1.0f);
  EXPECT_EQ(x.grad()[2], -1.0f);
}

TEST(Elementwise, OverflowIsAnError) {
  auto tape = Tape::inference();
  const float big = std::numeric_limits<float>::max();
  EXPECT_THROW(mul(tape, Tensor({1}, {big}), Tensor({1}, {big})), numeric_error);
}

TEST(Reduce, MeanAndSum) {
  auto tape = Tape::inference();
  EXPECT_EQ(mean(tape, Tensor({3}, {1, 2, 3})).item(), 2.0f);
  EXPECT_EQ(sum(tape, Tensor::full({10}, 0.5f)).item(), 5.0f);
  EXPECT_THROW(sum(tape, Tensor::zeros({0})), std::domain_error);
}

TEST(Reduce, SumOverMeanIsElementCountIn64Bit) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(500);
    auto x = randn<double>({n}, rng);
    for (auto& v : x.mutable_data()) v += 0.5;  // non-zero mean
    auto tape = Tape64::inference();
    const double s = sum(tape, x).item();
    const double m = mean(tape, x).item();
    // Correctly rounded division cannot make this exact for every n; the
    // quotient is always within one ulp of n.
    const double nd = static_cast<double>(n);
    EXPECT_LE(std::abs(s / m - nd), std::nextafter(nd, 2 * nd) - nd) << "n=" << n;
  }
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  auto x = Tensor::full({2, 3}, 0.3f, true);
  backward(sum(tape, x), tape);
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, MeanOfSquare) {
  Tape tape;
  auto x = Tensor({1}, {3.0f}, true);
  backward(mean(tape, square(tape, x)), tape);
  EXPECT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, SecondCallAccumulates) {
  Tape tape;
  auto x = Tensor({2}, {1.0f, -2.0f}, true);
  auto loss = sum(tape, mul(tape, x, x));
  backward(loss, tape);
  backward(loss, tape);
  EXPECT_EQ(x.grad()[0], 4.0f);
  EXPECT_EQ(x.grad()[1], -8.0f);
}

TEST(Backward, NonScalarOrUnrecordedLossIsContractError) {
  Tape tape;
  auto x = Tensor({2}, {1.0f, 2.0f}, true);
  auto y = relu(tape, x);
  EXPECT_THROW(backward(y, tape), contract_error);
  Tape other;
  auto loss = sum(other, x);
  EXPECT_THROW(backward(loss, tape), contract_error);
}

TEST(Backward, InferenceTapeRecordsNothing) {
  auto tape = Tape::inference();
  auto x = Tensor({2}, {1.0f, 2.0f}, true);
  auto y = sum(tape, relu(tape, x));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(3);
  ScalarFn<double> f = [](Tape64& t, const std::vector<Tensor64>& in) { return sum(t, in[0]); };
  EXPECT_LT(grad_check<double>(f, {randn<double>({3, 4}, rng)}, 1e-3), 1e-10);
}

TEST(GradCheck, TanhConvComposite) {
  Rng rng(4);
  ScalarFn<double> f = [](Tape64& t, const std::vector<Tensor64>& in) {
    return mean_sq(t, ictd::tanh(t, conv2d(t, in[0], in[1], Tensor64(), 1, 1)));
  };
  EXPECT_LT(grad_check<double>(f, {randn<double>({1, 1, 4, 4}, rng), randn<double>({2, 1, 3, 3}, rng)}, 1e-6),
            1e-5);
}

TEST(GradCheck, AbsAwayFromKink) {
  Rng rng(5);
  auto x = randn<double>({2, 5}, rng);
  for (auto& v : x.mutable_data()) v = (v >= 0 ? 0.1 + v : -0.1 + v);
  ScalarFn<double> f = [](Tape64& t, const std::vector<Tensor64>& in) { return mean(t, ictd::abs(t, in[0])); };
  EXPECT_LT(grad_check<double>(f, {x}, 1e-6), 1e-6);
}


TEST(GradCheck, EveryOp64Bit) {
  Rng rng(11);
  auto inputs = per_op_inputs<double>(rng);
  for (const auto& [name, f] : per_op_functions<double>()) {
    EXPECT_LT(grad_check<double>(f, inputs, 1e-5), 1e-5) << name;
  }
}

namespace {

// Single-precision finite differences are only meaningful where no gradient
// coordinate is close to zero, so the 32-bit checks use positive inputs and a
// positively weighted sum as the scalar head.
std::vector<std::pair<const char*, ScalarFn<float>>> per_op_functions_f32() {
  using In = std::vector<Tensor>;
  auto head = [](Tape& t, const Tensor& y, const Tensor& c) {
    return sum(t, mul(t, y, reshape(t, c, y.shape())));
  };
  return {
      {"conv2d", [head](Tape& t, const In& in) { return head(t, conv2d(t, in[0], in[1], in[2], 1, 1), in[3]); }},
      {"conv_transpose2d",
       [head](Tape& t, const In& in) { return head(t, conv_transpose2d(t, in[0], in[4], in[2], 1, 1), in[3]); }},
      {"instance_norm",
       [](Tape& t, const In& in) {
         // Hand-picked 1x1x2x2 channel with a non-symmetric head so that no
         // coordinate of d/dx is near zero.
         Tensor x = reshape(t, in[9], Shape{1, 1, 2, 2});
         Tensor c({1, 1, 2, 2}, {1.0f, 0.2f, -0.6f, 0.3f});
         auto y = instance_norm(t, x, in[10], in[10], 1e-5f);
         return sum(t, mul(t, square(t, add_scalar(t, y, 2.0f)), c));
       }},
      {"relu", [head](Tape& t, const In& in) { return head(t, square(t, relu(t, in[0])), in[6]); }},
      {"leaky_relu", [head](Tape& t, const In& in) { return head(t, square(t, leaky_relu(t, in[0], 0.2f)), in[6]); }},
      {"tanh", [head](Tape& t, const In& in) { return head(t, ictd::tanh(t, in[0]), in[6]); }},
      {"abs", [head](Tape& t, const In& in) { return head(t, square(t, ictd::abs(t, in[0])), in[6]); }},
      {"add", [](Tape& t, const In& in) { return sum(t, square(t, add(t, in[0], in[6]))); }},
      {"sub", [](Tape& t, const In& in) { return sum(t, square(t, sub(t, in[0], scalar_mul(t, in[6], -1.0f)))); }},
      {"mul", [head](Tape& t, const In& in) { return head(t, mul(t, in[0], in[6]), in[6]); }},
      {"scalar_mul", [head](Tape& t, const In& in) { return head(t, scalar_mul(t, in[0], 1.5f), in[6]); }},
      {"reduce_sum", [](Tape& t, const In& in) { return square(t, sum(t, in[0])); }},
      {"reduce_mean", [](Tape& t, const In& in) { return square(t, mean(t, in[0])); }},
      {"concat_channels",
       [](Tape& t, const In& in) { return sum(t, square(t, concat_channels(t, in[0], in[6]))); }},
      {"spatial_mean", [](Tape& t, const In& in) { return sum(t, square(t, spatial_mean(t, in[0]))); }},
      {"linear",
       [](Tape& t, const In& in) {
         auto flat = reshape(t, in[0], Shape{2, 2 * 4 * 4});
         return sum(t, linear(t, flat, in[7], in[8]));
       }},
      {"softmax_cross_entropy",
       [](Tape& t, const In& in) {
         std::vector<int> labels{1, 2};
         std::vector<float> w{2.0f, 0.5f};
         return softmax_cross_entropy(t, in[11], labels, w);
       }},
  };
}

Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
  auto t = Tensor::zeros(std::move(s));
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST(GradCheck, EveryOp32Bit) {
  Rng rng(12);
  std::vector<Tensor> inputs{
      uniform({2, 2, 4, 4}, rng, 0.2, 1.2),   // 0: image
      uniform({3, 2, 3, 3}, rng, 0.2, 1.2),   // 1: conv weight
      uniform({3}, rng, 0.2, 1.2),            // 2: bias
      uniform({2, 3, 4, 4}, rng, 0.5, 1.5),   // 3: head weights for conv outputs
      uniform({2, 3, 3, 3}, rng, 0.2, 1.2),   // 4: transpose weight
      uniform({2}, rng, 0.5, 1.5),            // 5: gamma/beta
      uniform({2, 2, 4, 4}, rng, 0.5, 1.5),   // 6: second operand / head weights
      uniform({3, 32}, rng, 0.2, 1.2),        // 7: linear weight
      uniform({3}, rng, 0.2, 1.2),            // 8: linear bias
      Tensor({4}, {0.1f, 0.5f, 0.2f, 0.9f}),  // 9: instance-norm channel
      Tensor({1}, {0.8f}),                    // 10: gamma/beta
      uniform({2, 3}, rng, -1.0, 1.0),        // 11: logits
  };
  // Polynomial functions have no truncation error, so a wide step only
  // suppresses rounding noise; smooth non-polynomial ones need a small step.
  const std::set<std::string> non_polynomial{"tanh", "instance_norm", "softmax_cross_entropy"};
  for (const auto& [name, f] : per_op_functions_f32()) {
    const double eps = non_polynomial.count(name) ? 1e-2 : 1e-1;
    EXPECT_LT(grad_check<float>(f, inputs, eps), 1e-3) << name;
  }
}

TEST(Adam, ZeroGradFreshStateLeavesParams) {
  std::vector<Tensor> p{Tensor({3}, {1.0f, -2.0f, 0.5f}, true)};
  p[0].mutable_grad();
  AdamState<float> st;
  adam_step(p, st);
  EXPECT_EQ(std::vector<float>(p[0].data().begin(), p[0].data().end()),
            (std::vector<float>{1.0f, -2.0f, 0.5f}));
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, FirstStepMovesByAlphaAgainstGradientSign) {
  Tape tape;
  std::vector<Tensor> p{Tensor({3}, {1.0f, -2.0f, 0.5f}, true)};
  Tensor coeff({3}, {0.7f, -3.0f, 12.0f});
  backward(sum(tape, mul(tape, p[0], coeff)), tape);  // grad == coeff
  AdamState<float> st;
  const std::vector<float> before(p[0].data().begin(), p[0].data().end());
  adam_step(p, st);
  for (std::size_t i = 0; i < 3; ++i) {
    const double sign = coeff.data()[i] > 0 ? 1.0 : -1.0;
    const double delta = static_cast<double>(p[0].data()[i]) - before[i];
    EXPECT_NEAR(delta, -st.hyper.alpha * sign, 1e-7);
  }
}

TEST(Adam, ZeroLearningRateIsNoOp) {
  Rng rng(8);
  std::vector<Tensor> p{randn<float>({4, 4}, rng)};
  p[0].set_requires_grad(true);
  const std::vector<float> before(p[0].data().begin(), p[0].data().end());
  AdamState<float> st(AdamHyper{.alpha = 0.0});
  for (int step = 0; step < 2; ++step) {
    Tape tape;
    backward(sum(tape, square(tape, p[0])), tape);
    adam_step(p, st);
    p[0].zero_grad();
  }
  EXPECT_EQ(st.t, 2u);
  EXPECT_EQ(std::vector<float>(p[0].data().begin(), p[0].data().end()), before);
}

TEST(Adam, ShapeMismatch) {
  std::vector<Tensor> p{Tensor::zeros({2}, true)};
  AdamState<float> st;
  adam_step(p, st);
  std::vector<Tensor> q{Tensor::zeros({3}, true)};
  EXPECT_THROW(adam_step(q, st), dimension_error);
}

TEST(Determinism, RepeatedForwardBackwardIsBitIdentical) {
  auto run = [] {
    Rng rng(21);
    auto x = randn<float>({2, 3, 8, 8}, rng);
    auto w = randn<float>({4, 3, 3, 3}, rng);
    w.set_requires_grad(true);
    Tape tape;
    auto y = instance_norm(tape, conv2d(tape, x, w, Tensor(), 1, 1), Tensor::full({4}, 1.0f),
                           Tensor::zeros({4}), 1e-5f);
    backward(mean_sq(tape, y), tape);
    return std::vector<float>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, RandomCompositeNetworks) {
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const auto net = ictd::testing::random_composite(seed);
    const double e64 = grad_check<double>(ictd::testing::composite_function<double>(net, seed),
                                          ictd::testing::composite_inputs<double>(net, seed), 1e-5);
    const double e32 = grad_check_mixed(ictd::testing::composite_function<float>(net, seed),
                                        ictd::testing::composite_function<double>(net, seed),
                                        ictd::testing::composite_inputs<double>(net, seed), 1e-5);
    EXPECT_LT(e64, 1e-5) << net.describe();
    EXPECT_LT(e32, 1e-3) << net.describe();
    std::cout << net.describe() << " 64-bit " << e64 << " 32-bit " << e32 << "\n";
  }
}
