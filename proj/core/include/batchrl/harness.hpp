#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "batchrl/algos.hpp"
#include "batchrl/env_spec.hpp"
#include "batchrl/prior.hpp"
#include "batchrl/tabular_mdp.hpp"

namespace batchrl {

enum class QKind { automatic, tabular, network };
enum class QInit { prior, zero, random };
enum class BiasPairs { uncovered, all };

struct ExperimentConfig {
  std::filesystem::path env_path;
  // Takes precedence over env_path when set.
  std::optional<EnvSpec> env;

  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  // Per-cell variant and seed are filled in by the harness.
  AlgoConfig algo;
  // False until a reward spec is given; dialog envs then use the default mixture.
  bool reward_set = false;
  std::size_t training_steps = 1000;
  std::size_t minibatch_size = 32;  // 0 = whole batch per step

  // Batch source. A "{seed}" in batch_path is replaced by the cell seed.
  std::filesystem::path batch_path;
  bool save_batches = false;
  std::size_t batch_episodes = 200;
  double behavior_temperature = 1.0;
  std::vector<std::pair<std::size_t, ActionIndex>> exclude_pairs;  // tabular (state, action)
  // Action indices, or token names for dialog envs.
  std::vector<std::string> exclude_actions;

  // Prior. Tabular envs fit smoothed counts (or, with prior_kind network, a
  // network) on the batch; dialog envs always fit a network on
  // reference-speaker demonstrations.
  PriorModel::Kind prior_kind = PriorModel::Kind::tabular_counts;
  double prior_smoothing = 0.1;
  std::size_t prior_members = 1;
  std::size_t demo_episodes = 200;
  double demo_noise = 0.05;
  std::size_t prior_epochs = 40;
  double prior_learning_rate = 0.05;
  double prior_self_normalization = 0.1;
  std::vector<std::size_t> hidden{32};
  double dropout_rate = 0.1;

  QKind q_kind = QKind::automatic;
  QInit q_init = QInit::prior;

  std::size_t eval_episodes = 50;
  ActMode eval_mode = ActMode::greedy;
  bool early_stopping = false;
  std::size_t eval_every = 100;
  std::size_t holdout_episodes = 20;
  BiasPairs bias_pairs = BiasPairs::uncovered;

  std::size_t workers = 1;
  std::filesystem::path output_dir = "batchrl_out";
  bool verbose = false;

  EnvSpec load_env() const;
  void validate() const;
  // Copy with env-dependent defaults filled in.
  ExperimentConfig resolved(const EnvSpec& env) const;
};

// Applies one `key = value` setting. Relative paths resolve against base_dir.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value,
                   const std::filesystem::path& base_dir = {});

// Flat key = value lines; '#' starts a comment.
ExperimentConfig parse_experiment_config(std::string_view text,
                                         const std::filesystem::path& base_dir = {});
// Also applies the BATCHRL_OUTPUT_DIR environment variable when set.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// "dialog" (the default mixture), or "channel:weight,channel:weight".
rewards::RewardSpec parse_reward_spec(std::string_view text);
std::string reward_spec_to_string(const rewards::RewardSpec& spec);

struct EvalStats {
  double total_return = 0.0;               // under the training reward spec
  std::map<std::string, double> channels;  // mean undiscounted return per channel
  double mean_length = 0.0;                // transitions per episode
};

struct CellResult {
  Variant variant = Variant::batch_q;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::size_t steps_completed = 0;
  std::size_t best_step = 0;
  EvalStats greedy;
  EvalStats sample;
  double mean_kl = 0.0;  // mean over training steps
  double final_kl = 0.0;
  std::vector<StepMetrics> metrics;
  std::optional<double> overestimation_bias;
  // Max-abs distance to the exact fixed point (tabular batch_q and kl_psi).
  std::optional<double> oracle_error;
  double wall_seconds = 0.0;
  std::optional<QFunction> q;
};

struct EvalReport {
  std::vector<CellResult> cells;  // variant-major, then seed, in config order
  std::vector<std::string> channels;
  std::vector<std::string> notices;

  const CellResult& cell(Variant variant, std::uint64_t seed) const;
};

// Batch and priors shared by every variant for one seed.
struct PreparedData {
  Batch batch;
  std::vector<std::shared_ptr<const PriorModel>> members;
  std::shared_ptr<const PolicyPrior> prior;
};

// Dialog batches are relabeled with the config's reward spec unless `relabel` is false.
PreparedData prepare_data(const ExperimentConfig& config, const EnvSpec& env, std::uint64_t seed,
                          bool relabel = true);

// Trains and evaluates one (variant, seed) cell. Failures are recorded in the result.
CellResult run_cell(const ExperimentConfig& config, const EnvSpec& env, const PreparedData& data,
                    Variant variant, std::uint64_t seed);

// Q built for a cell before training (from the prior, zero or random).
PriorInitializedQ build_q(const ExperimentConfig& config, const EnvSpec& env,
                          const PreparedData& data, std::uint64_t seed);

EvalReport run_experiment(const ExperimentConfig& config);

// Mean undiscounted returns over fresh rollouts.
EvalStats evaluate_policy(const Environment& env, const PolicyFn& policy, std::size_t episodes,
                          std::uint64_t seed, const rewards::RewardSpec& spec);

// Q values of every MDP state as a table.
TabularQ tabulate(const QFunction& q, const TabularMDP& mdp);

// The same MDP with another discount.
TabularMDP with_gamma(const TabularMDP& mdp, double gamma);

// Mean over `pairs` of Q_learned(s,a) - Q^pi(s,a), with Q^pi from exact policy evaluation.
double overestimation_bias(const TabularQ& learned, const std::vector<ActionDistribution>& policy,
                           const TabularMDP& mdp,
                           std::span<const std::pair<std::size_t, ActionIndex>> pairs,
                           EvaluationMode mode = EvaluationMode::plain,
                           const PolicyPrior* prior = nullptr, double reward_scale = 1.0,
                           const std::vector<ActionDistribution>* penalty_policy = nullptr);

// Creates the directory and checks that it is writable.
void check_output_dir(const std::filesystem::path& dir);

// Writes metrics.csv, kl_curve.csv, summary.csv, timings.csv and plot_results.py.
void emit_reports(const EvalReport& report, const std::filesystem::path& dir);

// Shortest round-trip decimal form; used for every number in the CSVs.
std::string format_number(double value);

}  // namespace batchrl
