#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "batchrl/errors.hpp"
#include "batchrl/optim.hpp"

namespace batchrl {
namespace {

TEST(SmoothL1, QuadraticBranch) {
  const auto r = smooth_l1(1.5, 1.0);
  EXPECT_DOUBLE_EQ(r.loss, 0.125);
  EXPECT_DOUBLE_EQ(r.grad, 0.5);
}

TEST(SmoothL1, LinearBranch) {
  const auto r = smooth_l1(3.0, 1.0);
  EXPECT_DOUBLE_EQ(r.loss, 1.5);
  EXPECT_DOUBLE_EQ(r.grad, 1.0);
  EXPECT_DOUBLE_EQ(smooth_l1(-1.0, 1.0).grad, -1.0);
}

TEST(SmoothL1, ZeroResidual) {
  const auto r = smooth_l1(0.7, 0.7);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad, 0.0);
}

TEST(ClipAndStep, RescalesLargeGradient) {
  std::vector<double> params{0.0, 0.0};
  std::vector<double> gradient{0.0, 4.0};
  const auto report = clip_and_step(params, gradient, 1.0, 1.0);
  EXPECT_TRUE(report.clipped);
  EXPECT_DOUBLE_EQ(report.gradient_norm, 4.0);
  EXPECT_DOUBLE_EQ(gradient[1], 1.0);
  EXPECT_DOUBLE_EQ(params[1], -1.0);
}

TEST(ClipAndStep, ScalesEveryEntryByTheSameFactor) {
  std::vector<double> params{1.0, 1.0, 1.0, 1.0};
  std::vector<double> gradient{2.0, 2.0, 2.0, 2.0};  // norm 4
  clip_and_step(params, gradient, 0.1, 1.0);
  for (double g : gradient) EXPECT_DOUBLE_EQ(g, 0.5);
  for (double p : params) EXPECT_DOUBLE_EQ(p, 0.95);
}

TEST(ClipAndStep, SmallGradientUnchanged) {
  std::vector<double> params{0.0};
  std::vector<double> gradient{0.5};
  const auto report = clip_and_step(params, gradient, 1e-4, 1.0);
  EXPECT_FALSE(report.clipped);
  EXPECT_DOUBLE_EQ(gradient[0], 0.5);
  EXPECT_DOUBLE_EQ(params[0], -0.5e-4);
}

TEST(ClipAndStep, ElementwiseMode) {
  std::vector<double> params{0.0, 0.0};
  std::vector<double> gradient{3.0, -0.2};
  clip_and_step(params, gradient, 1.0, 1.0, ClipMode::elementwise);
  EXPECT_DOUBLE_EQ(params[0], -1.0);
  EXPECT_DOUBLE_EQ(params[1], 0.2);
}

TEST(ClipAndStep, NonFiniteGradientLeavesParamsUntouched) {
  std::vector<double> params{1.0, 2.0};
  std::vector<double> gradient{std::numeric_limits<double>::quiet_NaN(), 0.0};
  EXPECT_THROW(clip_and_step(params, gradient, 1.0, 1.0), TrainingError);
  EXPECT_EQ(params, (std::vector<double>{1.0, 2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam adam;
  std::vector<double> params{0.0, 0.0};
  std::vector<double> gradient{0.3, -0.01};
  adam.step(params, gradient, 0.1, 10.0);
  EXPECT_NEAR(params[0], -0.1, 1e-6);
  EXPECT_NEAR(params[1], 0.1, 1e-5);
  EXPECT_EQ(adam.step_count(), 1u);
}

TEST(Adam, MinimizesQuadratic) {
  Adam adam;
  std::vector<double> x{3.0, -2.0};
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> g{2.0 * x[0], 2.0 * x[1]};
    adam.step(x, g, 0.05, 1.0);
  }
  EXPECT_NEAR(x[0], 0.0, 1e-3);
  EXPECT_NEAR(x[1], 0.0, 1e-3);
}

TEST(Adam, RejectsChangingShape) {
  Adam adam;
  std::vector<double> a{0.0, 0.0}, ga{1.0, 1.0};
  adam.step(a, ga, 0.1, 1.0);
  std::vector<double> b{0.0}, gb{1.0};
  EXPECT_THROW(adam.step(b, gb, 0.1, 1.0), UsageError);
}

TEST(PolyakUpdate, ExactConvexCombination) {
  std::vector<double> target{0.0, 2.0};
  const std::vector<double> source{1.0, 4.0};
  polyak_update(target, source, 0.25);
  EXPECT_DOUBLE_EQ(target[0], 0.25);
  EXPECT_DOUBLE_EQ(target[1], 2.5);
  EXPECT_THROW(polyak_update(target, source, 0.0), UsageError);
}

}  // namespace
}  // namespace batchrl
