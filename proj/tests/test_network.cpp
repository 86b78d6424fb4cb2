#include <gtest/gtest.h>

#include <sstream>
#include <vector>

#include "batchrl/checkpoint.hpp"
#include "batchrl/errors.hpp"
#include "batchrl/network.hpp"
#include "batchrl/q_function.hpp"
#include "support.hpp"

namespace batchrl {
namespace {

std::vector<LayerShape> small_shapes(Activation hidden = Activation::tanh) {
  const std::vector<std::size_t> widths{3, 4, 2};
  return mlp_shapes(widths, hidden);
}

TEST(Forward, ZeroWeightsGiveZeroValues) {
  const FeedforwardQ net(small_shapes(), 0.2);
  const std::vector<double> input{0.3, -1.0, 2.0};
  const auto mask = net.sample_mask(5);
  for (double v : net.forward(input)) EXPECT_EQ(v, 0.0);
  for (double v : net.forward(input, &mask)) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ZeroRateMaskMatchesDeterministicPass) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.0, 11);
  const std::vector<double> input{0.3, -1.0, 2.0};
  const auto mask = net.sample_mask(99);
  EXPECT_EQ(net.forward(input, &mask), net.forward(input));
}

TEST(Forward, FixedMaskIsBitReproducible) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.3, 11);
  const std::vector<double> input{0.3, -1.0, 2.0};
  const auto a = net.sample_mask(42);
  const auto b = net.sample_mask(42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(net.forward(input, &a), net.forward(input, &b));
}

TEST(Forward, MaskEntriesAreZeroOrInverseKeep) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.25, 1);
  const auto mask = net.sample_mask(8);
  ASSERT_EQ(mask.layers.size(), 2u);
  for (const auto& layer : mask.layers) {
    for (double m : layer) EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.75);
  }
}

TEST(Forward, RejectsWrongInputWidth) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.0, 1);
  EXPECT_THROW(net.forward(std::vector<double>{1.0}), UsageError);
}

TEST(Network, RejectsDropoutRateOfOne) {
  EXPECT_THROW(FeedforwardQ(small_shapes(), 1.0), UsageError);
}

TEST(Network, ParameterLayoutIsWeightsThenBias) {
  const FeedforwardQ net(small_shapes(), 0.0);
  EXPECT_EQ(net.parameter_count(), 3u * 4u + 4u + 4u * 2u + 2u);
  EXPECT_EQ(net.weight_offset(1), 16u);
  EXPECT_EQ(net.bias_offset(1), 24u);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = testing::random_net(rng, 1, Activation::tanh, 0.2);
    const auto input = testing::random_vector(rng, net.input_width());
    const auto grad = testing::random_vector(rng, net.output_width());
    const auto mask = net.sample_mask(rng());
    EXPECT_LE(testing::check_gradient(net, input, nullptr, grad).max_relative_error, 1e-4);
    EXPECT_LE(testing::check_gradient(net, input, &mask, grad).max_relative_error, 1e-4);
  }
}

TEST(Backward, TwoLayerNetUnderFiftyParameters) {
  const std::vector<std::size_t> widths{3, 5, 3};
  const auto net = FeedforwardQ::uniform_init(mlp_shapes(widths, Activation::tanh), 0.0, 17);
  ASSERT_LE(net.parameter_count(), 50u);
  const std::vector<double> input{0.4, -0.7, 1.1};
  const std::vector<double> grad{1.0, -0.5, 0.25};
  EXPECT_LE(testing::check_gradient(net, input, nullptr, grad).max_relative_error, 1e-4);
}

TEST(Backward, ZeroUpstreamGradientGivesZero) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.0, 3);
  std::vector<double> gradient(net.parameter_count(), 0.0);
  net.backward(std::vector<double>{1.0, 2.0, 3.0}, nullptr, 1, 0.0, gradient);
  for (double g : gradient) EXPECT_EQ(g, 0.0);
}

TEST(Backward, OutputBiasGradientEqualsUpstream) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.0, 3);
  std::vector<double> gradient(net.parameter_count(), 0.0);
  net.backward(std::vector<double>{1.0, 2.0, 3.0}, nullptr, 1, 0.37, gradient);
  EXPECT_DOUBLE_EQ(gradient[net.bias_offset(1) + 1], 0.37);
  EXPECT_DOUBLE_EQ(gradient[net.bias_offset(1) + 0], 0.0);
}

TEST(McLowerBound, TakesPerActionMinimumOverPasses) {
  const std::vector<std::vector<double>> rows{{1.2, 0.0}, {0.8, 1.0}, {1.0, -2.0}, {0.9, 0.5},
                                              {1.1, 3.0}};
  const auto low = elementwise_min(rows);
  EXPECT_DOUBLE_EQ(low[0], 0.8);
  EXPECT_DOUBLE_EQ(low[1], -2.0);
}

TEST(McLowerBound, ZeroDropoutEqualsForward) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(), 0.0, 5);
  const std::vector<double> input{0.1, 0.2, 0.3};
  Rng rng(1);
  for (std::size_t m : {1u, 5u, 17u}) EXPECT_EQ(net.mc_lower_bound(input, m, rng), net.forward(input));
}

TEST(McLowerBound, NeverExceedsPassMean) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto net = testing::random_net(rng, 1, Activation::relu, 0.3);
    const auto input = testing::random_vector(rng, net.input_width());
    Rng a(trial), b(trial);
    const auto low = net.mc_lower_bound(input, 5, a);
    const auto rows = net.stochastic_passes(input, 5, b);
    EXPECT_EQ(low, elementwise_min(rows));
    for (std::size_t k = 0; k < low.size(); ++k) {
      double mean = 0.0;
      for (const auto& row : rows) mean += row[k] / 5.0;
      EXPECT_LE(low[k], mean + 1e-12);
    }
  }
}

TEST(QFunction, TabularPathIgnoresMasks) {
  TabularQ table(2, 2);
  table.at(1, 0) = 3.0;
  const QFunction q(table);
  State s;
  s.id = 1;
  Rng rng(0);
  EXPECT_EQ(q.mc_lower_bound(s, 5, rng), q.values(s));
  EXPECT_EQ(q.values(s)[0], 3.0);
}

TEST(TargetCopy, PolyakExamples) {
  TabularQ zero(1, 1, 0.0), one(1, 1, 1.0);
  TargetCopy target = make_target(QFunction(zero), 0.005);
  polyak_update(target, QFunction(one));
  EXPECT_DOUBLE_EQ(target.net.parameters()[0], 0.005);

  TargetCopy hard = make_target(QFunction(zero), 1.0);
  polyak_update(hard, QFunction(one));
  EXPECT_EQ(hard.net.parameters()[0], 1.0);

  TargetCopy twice = make_target(QFunction(zero), 0.5);
  polyak_update(twice, QFunction(one));
  polyak_update(twice, QFunction(one));
  EXPECT_DOUBLE_EQ(twice.net.parameters()[0], 0.75);
}

TEST(TargetCopy, ShapeMismatchThrows) {
  TargetCopy target = make_target(QFunction(TabularQ(2, 2)), 0.5);
  EXPECT_THROW(polyak_update(target, QFunction(TabularQ(3, 2))), UsageError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto net = FeedforwardQ::uniform_init(small_shapes(Activation::relu), 0.15, 21);
  std::stringstream buffer;
  write_checkpoint(buffer, QFunction(net), 1234);
  const Checkpoint loaded = read_checkpoint(buffer);
  EXPECT_EQ(loaded.seed, 1234u);
  ASSERT_NE(loaded.q.network(), nullptr);
  EXPECT_EQ(*loaded.q.network(), net);
}

TEST(Checkpoint, TabularRoundTrip) {
  TabularQ table(3, 2);
  table.at(2, 1) = -0.1;
  std::stringstream buffer;
  write_checkpoint(buffer, QFunction(table), 5);
  EXPECT_EQ(*read_checkpoint(buffer).q.tabular(), table);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream buffer("not a checkpoint\n");
  EXPECT_THROW(read_checkpoint(buffer), FormatError);
}

}  // namespace
}  // namespace batchrl
