#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "batchrl/algos.hpp"
#include "batchrl/environment.hpp"
#include "batchrl/network.hpp"
#include "batchrl/prior.hpp"
#include "batchrl/tabular_mdp.hpp"

namespace {

using namespace batchrl;

FeedforwardQ make_net(std::size_t width, double dropout) {
  const std::vector<std::size_t> widths{width, 32, 32, width};
  return FeedforwardQ::uniform_init(mlp_shapes(widths, Activation::relu), dropout, 1);
}

std::vector<double> make_input(std::size_t width) {
  std::vector<double> x(width);
  for (std::size_t i = 0; i < width; ++i) x[i] = 0.1 * static_cast<double>(i % 7) - 0.3;
  return x;
}

void BM_Forward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto net = make_net(width, 0.0);
  const auto x = make_input(width);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64)->Arg(128);

void BM_Backward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto net = make_net(width, 0.1);
  const auto x = make_input(width);
  const auto mask = net.sample_mask(3);
  std::vector<double> upstream(width, 0.0);
  upstream[0] = 1.0;
  std::vector<double> gradient(net.parameter_count(), 0.0);
  for (auto _ : state) {
    net.backward(x, &mask, upstream, gradient);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Backward)->Arg(16)->Arg(64)->Arg(128);

void BM_McLowerBound(benchmark::State& state) {
  const auto net = make_net(64, 0.1);
  const auto x = make_input(64);
  const auto passes = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(net.mc_lower_bound(x, passes, rng));
}
BENCHMARK(BM_McLowerBound)->Arg(1)->Arg(5)->Arg(20);

void BM_TrainStep(benchmark::State& state) {
  const auto variant = static_cast<Variant>(state.range(0));
  const TabularEnvironment env(make_gridworld());
  const auto& mdp = env.mdp();
  auto prior = std::make_shared<const PriorModel>(PriorModel::from_counts(
      "u", mdp.state_count(), mdp.action_count(),
      std::vector<double>(mdp.state_count() * mdp.action_count(), 1.0), 0.0));
  BehaviorPolicy behavior;
  behavior.model = prior;
  behavior.model_id = "u";
  const auto batch = generate_batch(env, std::span(&behavior, 1), 50, 2);
  std::vector<Transition> minibatch(batch.transitions().begin(), batch.transitions().begin() + 32);

  AlgoConfig config;
  config.variant = variant;
  config.gamma = 0.9;
  const std::vector<std::size_t> widths{mdp.state(0).features.size(), 32, mdp.action_count()};
  QFunction q(FeedforwardQ::uniform_init(mlp_shapes(widths, Activation::relu), 0.1, 7));
  auto train_state = make_train_state(std::move(q), prior, config);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train_state, minibatch, config));
  state.SetLabel(std::string(to_string(variant)));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 4);

void BM_ValueIteration(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto mdp = make_gridworld(side, side, 0.9);
  for (auto _ : state) benchmark::DoNotOptimize(value_iteration(mdp));
}
BENCHMARK(BM_ValueIteration)->Arg(4)->Arg(8)->Arg(16);

void BM_SoftValueIteration(benchmark::State& state) {
  const auto mdp = make_gridworld(8, 8, 0.9);
  const auto prior = PriorModel::from_counts(
      "u", mdp.state_count(), mdp.action_count(),
      std::vector<double>(mdp.state_count() * mdp.action_count(), 1.0), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(soft_value_iteration(mdp, prior, 2.0));
}
BENCHMARK(BM_SoftValueIteration);

}  // namespace

BENCHMARK_MAIN();
