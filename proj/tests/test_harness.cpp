#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "batchrl/errors.hpp"
#include "batchrl/harness.hpp"
#include "support.hpp"

namespace batchrl {
namespace {

namespace fs = std::filesystem;

const fs::path kData = BATCHRL_DATA_DIR;
const fs::path kFixtures = BATCHRL_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("batchrl_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

// Small enough to run in well under a second.
ExperimentConfig tiny_chain_config(const fs::path& out) {
  auto config = parse_experiment_config(
      "env = " + (kData / "envs/chain.json").string() + "\n"
      "variants = batch_q, kl_psi   # two variants\n"
      "seeds = 0,1\n"
      "training_steps = 20\n"
      "minibatch_size = 8\n"
      "batch_episodes = 20\n"
      "eval_episodes = 5\n"
      "learning_rate = 0.01\n");
  config.output_dir = out;
  return config;
}

TEST(Config, ParsesKeysAndComments) {
  const auto config = parse_experiment_config(
      "# comment line\n"
      "variants = batch_q,dbcq\n"
      "seeds = 3, 4, 5\n"
      "gamma = 0.9\n"
      "reward_scale = 1\n"
      "reward = question:1, sentiment:0.5\n"
      "exclude_pairs = 1:3\n"
      "optimizer = sgd\n"
      "bias_pairs = all\n");
  EXPECT_EQ(config.variants, (std::vector<Variant>{Variant::batch_q, Variant::dbcq}));
  EXPECT_EQ(config.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
  EXPECT_DOUBLE_EQ(config.algo.gamma, 0.9);
  EXPECT_DOUBLE_EQ(config.algo.reward_scale, 1.0);
  EXPECT_TRUE(config.reward_set);
  EXPECT_DOUBLE_EQ(config.algo.reward.weights.at("sentiment"), 0.5);
  ASSERT_EQ(config.exclude_pairs.size(), 1u);
  EXPECT_EQ(config.exclude_pairs[0], (std::pair<std::size_t, ActionIndex>{1, 3}));
  EXPECT_EQ(config.algo.optimizer, OptimizerKind::sgd);
  EXPECT_EQ(config.bias_pairs, BiasPairs::all);
}

TEST(Config, RejectsBadLines) {
  EXPECT_THROW(parse_experiment_config("colour = blue\n"), UsageError);
  EXPECT_THROW(parse_experiment_config("variants\n"), UsageError);
  EXPECT_THROW(parse_experiment_config("gamma = lots\n"), UsageError);
  EXPECT_THROW(parse_experiment_config("variants = sarsa\n"), UsageError);
}

TEST(Config, ValidateNeedsVariantsSeedsAndEnv) {
  ExperimentConfig config;
  EXPECT_THROW(config.validate(), UsageError);
  config = tiny_chain_config(scratch("validate"));
  EXPECT_NO_THROW(config.validate());
  config.env_path = "/nonexistent/env.json";
  EXPECT_THROW(config.validate(), UsageError);
}

TEST(RewardSpecText, RoundTrip) {
  const auto spec = parse_reward_spec("question:1,laughter:0.25");
  EXPECT_EQ(reward_spec_to_string(spec), "laughter:0.25,question:1");
  EXPECT_EQ(parse_reward_spec("dialog").weights.size(), 7u);
  EXPECT_THROW(parse_reward_spec(""), UsageError);
}

TEST(RunExperiment, TwentyCellsOnChain) {
  auto config = tiny_chain_config(scratch("twenty"));
  config.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  config.training_steps = 10;
  const auto report = run_experiment(config);
  ASSERT_EQ(report.cells.size(), 20u);
  std::set<std::pair<Variant, std::uint64_t>> seen;
  for (const auto& c : report.cells) {
    EXPECT_TRUE(c.ok) << c.error;
    EXPECT_EQ(c.steps_completed, 10u);
    EXPECT_TRUE(seen.insert({c.variant, c.seed}).second);
  }
  EXPECT_EQ(report.cell(Variant::kl_psi, 7).seed, 7u);
  EXPECT_THROW(report.cell(Variant::dbcq, 0), UsageError);
}

TEST(RunExperiment, RerunGivesIdenticalCsvs) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  emit_reports(run_experiment(tiny_chain_config(a)), a);
  emit_reports(run_experiment(tiny_chain_config(b)), b);
  for (const char* name : {"metrics.csv", "kl_curve.csv", "summary.csv", "plot_results.py"}) {
    const auto text = testing::read_file(a / name);
    EXPECT_FALSE(text.empty()) << name;
    EXPECT_EQ(text, testing::read_file(b / name)) << name;
  }
}

TEST(RunExperiment, MatchesGoldenCsvs) {
  const auto out = scratch("golden");
  emit_reports(run_experiment(tiny_chain_config(out)), out);
  if (std::getenv("BATCHRL_UPDATE_GOLDEN") != nullptr) {
    fs::copy_file(out / "summary.csv", kFixtures / "golden_summary.csv",
                  fs::copy_options::overwrite_existing);
    fs::copy_file(out / "kl_curve.csv", kFixtures / "golden_kl_curve.csv",
                  fs::copy_options::overwrite_existing);
  }
  EXPECT_EQ(testing::read_file(out / "summary.csv"),
            testing::read_file(kFixtures / "golden_summary.csv"));
  EXPECT_EQ(testing::read_file(out / "kl_curve.csv"),
            testing::read_file(kFixtures / "golden_kl_curve.csv"));
}

TEST(EmitReports, Schemas) {
  const auto out = scratch("schema");
  const auto report = run_experiment(tiny_chain_config(out));
  emit_reports(report, out);
  const auto kl = testing::read_file(out / "kl_curve.csv");
  EXPECT_EQ(kl.substr(0, kl.find('\n')), "step,variant,seed,mean_kl");
  const auto summary = testing::read_file(out / "summary.csv");
  std::size_t lines = 0;
  for (char ch : summary) lines += ch == '\n' ? 1 : 0;
  EXPECT_EQ(lines, 1 + report.cells.size());
  const std::string header = summary.substr(0, summary.find('\n'));
  EXPECT_EQ(header.rfind("variant,seed,status,", 0), 0u);
  EXPECT_NE(header.find(",mean_kl,"), std::string::npos);
  EXPECT_NE(header.find(",overestimation_bias,"), std::string::npos);
  EXPECT_NE(header.find("greedy_return_reward"), std::string::npos);
}

TEST(EmitReports, UnwritableDirectoryFailsUpfront) {
  const auto base = scratch("unwritable");
  fs::create_directories(base);
  { std::ofstream(base / "file") << "x"; }
  auto config = tiny_chain_config(base / "file" / "sub");
  EXPECT_THROW(check_output_dir(config.output_dir), UsageError);
  EXPECT_THROW(run_experiment(config), UsageError);
}

TEST(OverestimationBias, IdentityAndShift) {
  const auto mdp = make_gridworld(3, 3, 0.9);
  std::vector<ActionDistribution> policy(mdp.state_count(), ActionDistribution::uniform(4));
  const auto truth = policy_evaluation(mdp, policy);
  std::vector<std::pair<std::size_t, ActionIndex>> pairs;
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    if (mdp.is_terminal(s)) continue;
    for (ActionIndex a = 0; a < 4; ++a) pairs.push_back({s, a});
  }
  EXPECT_NEAR(overestimation_bias(truth, policy, mdp, pairs), 0.0, 1e-9);
  TabularQ shifted = truth;
  for (double& v : shifted.parameters()) v += 1.0;
  EXPECT_NEAR(overestimation_bias(shifted, policy, mdp, pairs), 1.0, 1e-9);
}

TEST(WithGamma, ChangesOnlyDiscount) {
  const auto mdp = with_gamma(make_chain(0.5), 0.9);
  EXPECT_DOUBLE_EQ(mdp.gamma(), 0.9);
  EXPECT_NEAR(value_iteration(mdp).at(0, 0), 0.9, 1e-9);
}

TEST(RunExperiment, DialogOmitsBiasWithNotice) {
  auto config = parse_experiment_config(
      "env = " + (kData / "envs/dialog.json").string() + "\n"
      "variants = batch_q\n"
      "seeds = 0\n"
      "training_steps = 3\n"
      "batch_episodes = 3\n"
      "demo_episodes = 5\n"
      "prior_epochs = 2\n"
      "hidden = 8\n"
      "eval_episodes = 2\n");
  config.output_dir = scratch("dialog");
  const auto report = run_experiment(config);
  ASSERT_EQ(report.cells.size(), 1u);
  EXPECT_TRUE(report.cells[0].ok) << report.cells[0].error;
  EXPECT_FALSE(report.cells[0].overestimation_bias.has_value());
  EXPECT_FALSE(report.notices.empty());
}

}  // namespace
}  // namespace batchrl
