#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tdsim/errors.hpp"
#include "tdsim/nn.hpp"
#include "tdsim/tensor.hpp"

using namespace tdsim;
using tdsim::testing::check_gradients;
using tdsim::testing::random_tensor;
using tdsim::testing::weighted_sum;

namespace {

Var leaf(Tensor t) { return Var(std::move(t), true); }

}  // namespace

TEST(Linear, IdentityAndHandSum) {
  auto out = linear(Var(Tensor({1, 2}, {1, 2})), Var(Tensor({2, 2}, {1, 0, 0, 1})),
                    Var(Tensor({2}, {0, 0})));
  EXPECT_EQ(out.value(), Tensor({1, 2}, {1, 2}));
  out = linear(Var(Tensor({1, 2}, {1, 1})), Var(Tensor({2, 1}, {2, 3})), Var(Tensor({1}, {1})));
  EXPECT_DOUBLE_EQ(out.value()[0], 6.0);
}

TEST(Linear, ShapeMismatchNamesAxis) {
  try {
    linear(Var(Tensor({1, 3})), Var(Tensor({2, 2})), Var(Tensor({2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis"), std::string::npos);
  }
  EXPECT_THROW(linear(Var(Tensor({1, 2})), Var(Tensor({2, 2})), Var(Tensor({3}))), DimensionError);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto x = leaf(random_tensor({3, 4}, rng));
  auto w = leaf(random_tensor({4, 5}, rng));
  auto b = leaf(random_tensor({5}, rng));
  auto r = check_gradients({x, w, b}, [&] { return weighted_sum(linear(x, w, b)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.checked, 12u + 20u + 5u);
}

TEST(Conv2d, PaddedOnesAndDeltaKernel) {
  auto out = conv2d(Var(Tensor({1, 1, 3, 3}, 1.0)), Var(Tensor({1, 1, 3, 3}, 1.0)),
                    Var(Tensor({1}, 0.0)));
  EXPECT_DOUBLE_EQ(out.value()[4], 9.0);
  EXPECT_DOUBLE_EQ(out.value()[0], 4.0);
  EXPECT_DOUBLE_EQ(out.value()[1], 6.0);

  std::mt19937_64 rng(2);
  Tensor x = random_tensor({2, 1, 4, 4}, rng);
  Tensor delta({1, 1, 3, 3}, 0.0);
  delta[4] = 1.0;
  EXPECT_EQ(conv2d(Var(x), Var(delta), Var(Tensor({1}))).value(), x);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(Var(Tensor({1, 2, 4, 4})), Var(Tensor({1, 3, 3, 3})), Var(Tensor({1}))),
               DimensionError);
  EXPECT_THROW(conv2d(Var(Tensor({1, 1, 4, 4})), Var(Tensor({1, 1, 2, 2})), Var(Tensor({1}))),
               DimensionError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto x = leaf(random_tensor({1, 2, 4, 4}, rng));
  auto k = leaf(random_tensor({3, 2, 3, 3}, rng));
  auto b = leaf(random_tensor({3}, rng));
  auto r = check_gradients({x, k, b}, [&] { return weighted_sum(conv2d(x, k, b)); });
  EXPECT_LT(r.max_rel_error, 1e-6);

  auto k1 = leaf(random_tensor({2, 2, 1, 1}, rng));
  auto b1 = leaf(random_tensor({2}, rng));
  r = check_gradients({x, k1, b1}, [&] { return weighted_sum(conv2d(x, k1, b1)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Pool2d, MaxAvgAndConstant) {
  Var x(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(pool2d(x, PoolKind::Avg).value()[0], 2.5);
  EXPECT_DOUBLE_EQ(pool2d(x, PoolKind::Max).value()[0], 4.0);
  Var c(Tensor({2, 3, 4, 6}, 1.75));
  for (auto kind : {PoolKind::Max, PoolKind::Avg}) {
    const auto out = pool2d(c, kind).value();
    EXPECT_EQ(out.shape(), (Shape{2, 3, 2, 3}));
    for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 1.75);
  }
  EXPECT_THROW(pool2d(Var(Tensor({1, 1, 3, 2})), PoolKind::Max), DimensionError);
  EXPECT_THROW(pool2d(Var(Tensor({1, 1, 2, 5})), PoolKind::Avg), DimensionError);
}

TEST(Pool2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (auto kind : {PoolKind::Max, PoolKind::Avg}) {
    auto x = leaf(random_tensor({2, 2, 4, 4}, rng));
    auto r = check_gradients({x}, [&] { return weighted_sum(pool2d(x, kind)); });
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(GlobalAvgPool, OnesIdentityLinearity) {
  auto out = global_avg_pool(Var(Tensor({1, 3, 2, 2}, 1.0))).value();
  EXPECT_EQ(out, Tensor({1, 3}, {1, 1, 1}));
  Tensor single({2, 2, 1, 1}, {0.5, -1, 3, 4});
  EXPECT_EQ(global_avg_pool(Var(single)).value(), single.reshaped({2, 2}));

  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor scaled = x;
  for (auto& v : scaled.data()) v *= 2.5;
  const auto a = global_avg_pool(Var(x)).value();
  const auto b = global_avg_pool(Var(scaled)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2.5 * a[i], 1e-12);

  auto xv = leaf(x);
  auto r = check_gradients({xv}, [&] { return weighted_sum(global_avg_pool(xv)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Relu, ValuesAndSubgradientAtZero) {
  auto y = relu(Var(Tensor({3}, {-1, 0, 2})));
  EXPECT_EQ(y.value(), Tensor({3}, {0, 0, 2}));
  EXPECT_EQ(relu(Var(Tensor({4}, -3.0))).value(), Tensor({4}, 0.0));

  auto x = leaf(Tensor({3}, {-1, 0, 2}));
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad(), Tensor({3}, {0, 0, 1}));
}

TEST(Relu, GradientAwayFromKink) {
  std::mt19937_64 rng(6);
  Tensor t = random_tensor({4, 5}, rng);
  for (auto& v : t.data()) v += v >= 0 ? 0.1 : -0.1;
  auto x = leaf(t);
  auto r = check_gradients({x}, [&] { return weighted_sum(relu(x)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Sigmoid, Gradient) {
  std::mt19937_64 rng(7);
  auto x = leaf(random_tensor({3, 3}, rng, -3, 3));
  auto r = check_gradients({x}, [&] { return weighted_sum(sigmoid(x)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_DOUBLE_EQ(sigmoid(Var(Tensor({1}, 0.0))).value()[0], 0.5);
}

TEST(Softmax, SymmetryStabilityShift) {
  EXPECT_EQ(softmax(Var(Tensor({1, 2}, {0, 0}))).value(), Tensor({1, 2}, {0.5, 0.5}));
  const auto big = softmax(Var(Tensor({1, 3}, {1000, 1000, 1000}))).value();
  for (double v : big.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  std::mt19937_64 rng(8);
  Tensor z = random_tensor({5, 7}, rng, -5, 5);
  Tensor zc = z;
  for (auto& v : zc.data()) v += 123.25;
  const auto a = softmax(Var(z)).value();
  const auto b = softmax(Var(zc)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 7; ++k) s += a[r * 7 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, ErrorsAndGradient) {
  EXPECT_THROW(softmax(Var(Tensor({1, 2}, {0, NAN}))), NumericError);
  EXPECT_THROW(softmax(Var(Tensor({1, 2}, {0, INFINITY}))), NumericError);
  EXPECT_THROW(softmax(Var(Tensor({2, 1}))), DimensionError);
  std::mt19937_64 rng(9);
  auto z = leaf(random_tensor({3, 4}, rng, -2, 2));
  auto r = check_gradients({z}, [&] { return weighted_sum(softmax(z)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CrossEntropy, ExamplesAndClamp) {
  Tensor target({1, 3}, {0, 1, 0});
  EXPECT_DOUBLE_EQ(cross_entropy(Var(target), target).value()[0], 0.0);
  Tensor t10({1, 10}, 0.0);
  t10[3] = 1.0;
  EXPECT_NEAR(cross_entropy(Var(Tensor({1, 10}, 0.1)), t10).value()[0], std::log(10.0), 1e-12);
  EXPECT_NEAR(cross_entropy(Var(Tensor({1, 3}, {0.5, 0.0, 0.5})), target).value()[0],
              std::log(1e12), 1e-9);
  EXPECT_NEAR(std::log(1e12), 27.631, 1e-3);
}

TEST(CrossEntropy, RejectsNonOneHotTargets) {
  EXPECT_THROW(cross_entropy(Var(Tensor({1, 2}, 0.5)), Tensor({1, 2}, {0.5, 0.5})),
               ValidationError);
  EXPECT_THROW(cross_entropy(Var(Tensor({1, 2}, 0.5)), Tensor({1, 2}, {1, 1})), ValidationError);
  EXPECT_THROW(cross_entropy(Var(Tensor({1, 2}, 0.5)), Tensor({1, 3}, {1, 0, 0})),
               DimensionError);
}

TEST(CrossEntropy, GradientThroughSoftmax) {
  std::mt19937_64 rng(10);
  auto z = leaf(random_tensor({4, 5}, rng, -2, 2));
  const Tensor target = one_hot(std::vector<int>{0, 3, 4, 1}, 5);
  auto r = check_gradients({z}, [&] { return cross_entropy(softmax(z), target); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(BinaryCrossEntropy, Examples) {
  EXPECT_NEAR(binary_cross_entropy(Var(Tensor({1}, 0.5)), Tensor({1}, 1.0)).value()[0],
              std::log(2.0), 1e-15);
  EXPECT_LT(binary_cross_entropy(Var(Tensor({1}, 1.0)), Tensor({1}, 1.0)).value()[0], 1e-11);
  EXPECT_NEAR(binary_cross_entropy(Var(Tensor({1}, 0.9)), Tensor({1}, 0.0)).value()[0],
              std::log(10.0), 1e-12);
  EXPECT_NEAR(binary_cross_entropy_value(0.9, 0.0), std::log(10.0), 1e-12);
  EXPECT_NEAR(binary_cross_entropy_value(0.0, 1.0), std::log(1e12), 1e-9);
}

TEST(BinaryCrossEntropy, Gradient) {
  std::mt19937_64 rng(11);
  auto d = leaf(random_tensor({6}, rng, 0.05, 0.95));
  const Tensor t({6}, {1, 0, 1, 1, 0, 0});
  auto r = check_gradients({d}, [&] { return binary_cross_entropy(d, t); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, Gradients) {
  std::mt19937_64 rng(12);
  auto a = leaf(random_tensor({3, 4}, rng));
  auto b = leaf(random_tensor({3, 4}, rng));
  const Tensor c = random_tensor({3, 4}, rng);
  auto r = check_gradients({a, b}, [&] {
    return mean(add_scalar(
        scale(add(mul(a, b), sub(reshape(reshape(a, {12}), {3, 4}), add_constant(b, c))), 0.7),
        0.3));
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(MixRows, ValuesAndGradient) {
  const auto m = mix_rows(Var(Tensor({2}, {1.0, 0.25})), Var(Tensor({2, 2}, {1, 2, 3, 4})),
                          Var(Tensor({2, 2}, {5, 6, 7, 8})))
                     .value();
  EXPECT_EQ(m, Tensor({2, 2}, {1, 2, 0.25 * 3 + 0.75 * 7, 0.25 * 4 + 0.75 * 8}));
  std::mt19937_64 rng(13);
  auto w = leaf(random_tensor({3, 1}, rng, 0, 1));
  auto a = leaf(random_tensor({3, 4}, rng));
  auto b = leaf(random_tensor({3, 4}, rng));
  auto r = check_gradients({w, a, b}, [&] { return weighted_sum(mix_rows(w, a, b)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_THROW(mix_rows(Var(Tensor({2})), a, b), DimensionError);
}

TEST(Backward, SumGivesOnesAndConstantGivesZeros) {
  auto w = leaf(Tensor({2, 3}, 0.4));
  backward(sum(w));
  EXPECT_EQ(w.grad(), Tensor({2, 3}, 1.0));

  w.zero_grad();
  backward(Var(Tensor({1}, 3.0)));
  EXPECT_EQ(w.grad(), Tensor({2, 3}, 0.0));
  EXPECT_THROW(backward(w), ValidationError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto w = leaf(Tensor({2}, {1, 2}));
  backward(sum(scale(w, 3.0)));
  backward(sum(scale(w, 3.0)));
  EXPECT_EQ(w.grad(), Tensor({2}, 6.0));
}

TEST(Backward, ReplayOrderIsReverseOfTrace) {
  auto x = leaf(Tensor({1, 2}, {1, 2}));
  auto w = leaf(Tensor({2, 2}, 0.5));
  auto b = leaf(Tensor({2}, 0.1));
  auto loss = mean(relu(linear(x, w, b)));
  const auto trace = ComputationRecord::trace(loss).entries();
  const auto replay = backward(loss).entries();
  ASSERT_EQ(trace.size(), replay.size());
  ASSERT_EQ(trace.size(), 3u);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(trace[i].seq, replay[replay.size() - 1 - i].seq);
  }
  EXPECT_EQ(trace.front().op, "linear");
  EXPECT_EQ(trace.back().op, "mean");
}

TEST(NoGrad, RecordsNothing) {
  auto w = leaf(Tensor({2}, 1.0));
  NoGradGuard guard;
  auto y = sum(scale(w, 2.0));
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(grad_enabled());
}

TEST(Sgd, StepLinearityAndErrors) {
  ParamRegistry reg;
  auto p = leaf(Tensor({1}, 1.0));
  reg.add("p", p);
  grad_buffer(p)[0] = 2.0;
  sgd_step(reg, 0.1);
  EXPECT_DOUBLE_EQ(p.value()[0], 0.8);
  EXPECT_EQ(p.grad(), Tensor({1}, 0.0));

  grad_buffer(p)[0] = 5.0;
  sgd_step(reg, 0.0);
  EXPECT_DOUBLE_EQ(p.value()[0], 0.8);

  auto q1 = leaf(Tensor({1}, 3.0)), q2 = leaf(Tensor({1}, 3.0));
  ParamRegistry r1, r2;
  r1.add("q", q1);
  r2.add("q", q2);
  for (int i = 0; i < 2; ++i) {
    grad_buffer(q1)[0] = 1.5;
    sgd_step(r1, 0.2);
  }
  grad_buffer(q2)[0] = 3.0;
  sgd_step(r2, 0.2);
  EXPECT_NEAR(q1.value()[0], q2.value()[0], 1e-15);

  ParamRegistry missing;
  missing.add("m", leaf(Tensor({1})));
  EXPECT_THROW(sgd_step(missing, 0.1), StateError);
  EXPECT_THROW(sgd_step(reg, -0.1), ValidationError);
}

TEST(ParamRegistry, OrderAndDuplicates) {
  ParamRegistry reg;
  reg.add("b", Var(Tensor({2})));
  reg.add("a", Var(Tensor({3})));
  EXPECT_EQ(reg.begin()->first, "b");
  EXPECT_EQ(reg.numel(), 5u);
  EXPECT_THROW(reg.add("a", Var(Tensor({1}))), ValidationError);
  EXPECT_THROW(reg.at("zz"), ValidationError);
}

TEST(OneHot, RejectsOutOfRange) {
  EXPECT_EQ(one_hot(std::vector<int>{1}, 3), Tensor({1, 3}, {0, 1, 0}));
  EXPECT_THROW(one_hot(std::vector<int>{3}, 3), ValidationError);
}
