#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "batchrl/distribution.hpp"
#include "batchrl/errors.hpp"
#include "batchrl/prior.hpp"
#include "batchrl/tabular_mdp.hpp"

namespace batchrl {
namespace {

State tabular_state(std::int64_t id, std::size_t count = 2) {
  State s;
  s.id = id;
  s.features.assign(count, 0.0);
  s.features[static_cast<std::size_t>(id)] = 1.0;
  return s;
}

// State 0 with actions [0, 0, 0, 1]; state 1 never visited.
std::vector<Trajectory> three_to_one() {
  Trajectory t;
  for (ActionIndex a : {0u, 0u, 0u, 1u}) t.push_back({tabular_state(0), a, {{"reward", 0.0}}});
  return {t};
}

TEST(FitCounts, EmpiricalFrequencies) {
  const auto prior = fit_mle_counts(three_to_one(), 2, 2, 0.0);
  const auto p = prior.evaluate(tabular_state(0));
  EXPECT_DOUBLE_EQ(p[0], 0.75);
  EXPECT_DOUBLE_EQ(p[1], 0.25);
}

TEST(FitCounts, LaplaceSmoothing) {
  const auto prior = fit_mle_counts(three_to_one(), 2, 2, 1.0);
  const auto p = prior.evaluate(tabular_state(0));
  EXPECT_DOUBLE_EQ(p[0], 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(p[1], 2.0 / 6.0);
}

TEST(FitCounts, UnseenStateFallsBackToUniformWithFlag) {
  const auto prior = fit_mle_counts(three_to_one(), 2, 2, 0.0);
  const auto e = prior.evaluate_flagged(tabular_state(1));
  EXPECT_TRUE(e.unseen);
  EXPECT_DOUBLE_EQ(e.distribution[0], 0.5);
  EXPECT_FALSE(prior.evaluate_flagged(tabular_state(0)).unseen);
}

TEST(FitCounts, RejectsOutOfRangeActions) {
  Trajectory t;
  t.push_back({tabular_state(0), 5, {}});
  EXPECT_THROW(fit_mle_counts(std::vector<Trajectory>{t}, 2, 2, 0.0), UsageError);
}

TEST(Average, ConvexCombination) {
  auto p1 = std::make_shared<const PriorModel>(
      PriorModel::from_counts("m1", 1, 2, {1.0, 0.0}, 0.0));
  auto p2 = std::make_shared<const PriorModel>(
      PriorModel::from_counts("m2", 1, 2, {1.0, 1.0}, 0.0));
  const auto avg = average({p1, p2}, {0.5, 0.5});
  const auto p = avg.evaluate(tabular_state(0, 1));
  EXPECT_DOUBLE_EQ(p[0], 0.75);
  EXPECT_DOUBLE_EQ(p[1], 0.25);
}

TEST(Average, SingleMemberIsIdentity) {
  auto p1 = std::make_shared<const PriorModel>(
      PriorModel::from_counts("m1", 1, 3, {2.0, 1.0, 1.0}, 0.0));
  const auto avg = average({p1}, {0.3});
  const auto a = avg.evaluate(tabular_state(0, 1));
  const auto b = p1->evaluate(tabular_state(0, 1));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(Average, ScoresNormalizedAndValidated) {
  auto p1 = std::make_shared<const PriorModel>(PriorModel::from_counts("m1", 1, 2, {1, 0}, 0.0));
  auto p2 = std::make_shared<const PriorModel>(PriorModel::from_counts("m2", 1, 2, {0, 1}, 0.0));
  const auto avg = average({p1, p2}, {3.0, 1.0});
  EXPECT_DOUBLE_EQ(avg.scores()[0], 0.75);
  EXPECT_THROW(average({p1, p2}, {0.0, 0.0}), UsageError);
  EXPECT_THROW(average({p1, p2}, {1.0}), UsageError);
}

TEST(Average, ScoresFromBatchMetadata) {
  auto p1 = std::make_shared<const PriorModel>(PriorModel::from_counts("a", 1, 2, {1, 0}, 0.0));
  auto p2 = std::make_shared<const PriorModel>(PriorModel::from_counts("b", 1, 2, {0, 1}, 0.0));
  const std::vector<std::shared_ptr<const PriorModel>> members{p1, p2};
  const auto scores = scores_from_metadata({{"a", 0.7}, {"b", 0.3}}, members);
  EXPECT_DOUBLE_EQ(scores[0], 0.7);
  EXPECT_DOUBLE_EQ(scores[1], 0.3);
}

TEST(InitQ, TabularIsLogPrior) {
  const auto prior = fit_mle_counts(three_to_one(), 2, 2, 0.0);
  const auto init = init_q_from_prior(prior, 0.005);
  ASSERT_TRUE(init.q.is_tabular());
  EXPECT_DOUBLE_EQ(init.q.tabular()->at(0, 0), std::log(0.75));
  EXPECT_DOUBLE_EQ(init.q.tabular()->at(0, 1), std::log(0.25));
  EXPECT_EQ(init.target.net, init.q);
  EXPECT_DOUBLE_EQ(init.target.polyak_rate, 0.005);
}

TEST(InitQ, NetworkCopiesPriorLogits) {
  const std::vector<std::size_t> widths{2, 6, 3};
  auto net = FeedforwardQ::uniform_init(mlp_shapes(widths, Activation::relu), 0.1, 4);
  const auto prior = PriorModel::from_network("net", net);
  const auto init = init_q_from_prior(prior, 0.01);
  const State s = tabular_state(1);
  EXPECT_EQ(init.q.values(s), net.forward(s.features));
  EXPECT_EQ(init.target.net, init.q);
  const std::vector<LayerShape> wrong = mlp_shapes(std::vector<std::size_t>{2, 5, 3}, Activation::relu);
  EXPECT_THROW(init_q_from_prior(prior, 0.01, TabularInit::log_prior, &wrong), UsageError);
}

TEST(FitNetwork, LearnsStateDependentPolicy) {
  // State 0 always takes action 1, state 1 always takes action 0.
  Trajectory t;
  for (int i = 0; i < 50; ++i) {
    t.push_back({tabular_state(0), 1, {}});
    t.push_back({tabular_state(1), 0, {}});
  }
  NetworkPriorOptions options;
  options.hidden = {8};
  options.max_epochs = 200;
  options.seed = 3;
  NetworkFitReport report;
  const auto prior = fit_mle_network(std::vector<Trajectory>{t}, 2, options, "bc", &report);
  EXPECT_GT(prior.evaluate(tabular_state(0))[1], 0.95);
  EXPECT_GT(prior.evaluate(tabular_state(1))[0], 0.95);
  ASSERT_GE(report.epoch_losses.size(), 2u);
  EXPECT_LT(report.epoch_losses.back(), report.epoch_losses.front());
}

TEST(FitNetwork, SelfNormalizationPullsLogitsTowardLogProbabilities) {
  Trajectory t;
  for (int i = 0; i < 40; ++i) {
    t.push_back({tabular_state(0), static_cast<ActionIndex>(i % 2), {}});
    t.push_back({tabular_state(1), 0, {}});
  }
  NetworkPriorOptions options;
  options.hidden = {8};
  options.max_epochs = 300;
  options.plateau_tolerance = 0.0;
  options.self_normalization = 1.0;
  const auto prior = fit_mle_network(std::vector<Trajectory>{t}, 2, options);
  for (std::int64_t s : {0, 1}) {
    const auto logits = prior.network()->forward(tabular_state(s).features);
    EXPECT_NEAR(log_sum_exp(logits), 0.0, 0.05);
  }
}

TEST(PriorCheckpoint, RoundTrip) {
  const auto counts = fit_mle_counts(three_to_one(), 2, 2, 0.5, "counts");
  std::stringstream a;
  write_prior(a, counts);
  const auto back = read_prior(a);
  EXPECT_EQ(back.model_id(), "counts");
  EXPECT_DOUBLE_EQ(back.smoothing(), 0.5);
  EXPECT_DOUBLE_EQ(back.evaluate(tabular_state(0))[0], counts.evaluate(tabular_state(0))[0]);

  const std::vector<std::size_t> widths{2, 3, 2};
  const auto net = PriorModel::from_network(
      "n", FeedforwardQ::uniform_init(mlp_shapes(widths, Activation::tanh), 0.0, 9));
  std::stringstream b;
  write_prior(b, net);
  EXPECT_EQ(*read_prior(b).network(), *net.network());
}

}  // namespace
}  // namespace batchrl
