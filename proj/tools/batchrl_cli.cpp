#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "batchrl/algos.hpp"
#include "batchrl/batch_io.hpp"
#include "batchrl/checkpoint.hpp"
#include "batchrl/env_spec.hpp"
#include "batchrl/errors.hpp"
#include "batchrl/harness.hpp"
#include "batchrl/rewards.hpp"

namespace {

using namespace batchrl;

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> settings;
  std::string env;
  std::string variants;
  std::string seeds;
  std::string output_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "experiment config file (key = value)");
    cmd->add_option("--set", settings, "override a config key, e.g. --set training_steps=200");
    cmd->add_option("--env", env, "environment spec (JSON)");
    cmd->add_option("--variants", variants, "comma-separated variants");
    cmd->add_option("--seeds", seeds, "seeds, e.g. 0-9 or 1,5,7");
    cmd->add_option("-o,--output-dir", output_dir, "output directory");
  }

  ExperimentConfig load() const {
    ExperimentConfig config;
    if (!config_path.empty()) {
      config = load_experiment_config(config_path);
    } else if (const char* dir = std::getenv("BATCHRL_OUTPUT_DIR"); dir != nullptr && *dir != '\0') {
      config.output_dir = dir;
    }
    for (const auto& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
    }
    if (!env.empty()) apply_setting(config, "env", env);
    if (!variants.empty()) apply_setting(config, "variants", variants);
    if (!seeds.empty()) apply_setting(config, "seeds", seeds);
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (config.variants.empty()) config.variants = {Variant::batch_q};
    if (config.seeds.empty()) config.seeds = {0};
    return config;
  }
};

void print_stats(const char* label, const EvalStats& stats) {
  std::cout << label << " total_return " << format_number(stats.total_return) << "  mean_length "
            << format_number(stats.mean_length) << '\n';
  for (const auto& [ch, r] : stats.channels) std::cout << "  " << ch << ' ' << format_number(r) << '\n';
}

int cmd_generate_batch(const ConfigFlags& flags, const std::string& out, std::uint64_t seed) {
  const ExperimentConfig config = flags.load();
  const EnvSpec env = config.load_env();
  const PreparedData data = prepare_data(config, env, seed, /*relabel=*/false);
  save_batch(out, data.batch);
  std::cout << "wrote " << data.batch.size() << " transitions to " << out << '\n';
  for (const auto& [model, share] : data.batch.metadata()) {
    std::cout << "  " << model << ' ' << format_number(share) << '\n';
  }
  return 0;
}

int cmd_train(const ConfigFlags& flags, const std::string& out) {
  const ExperimentConfig config = flags.load();
  config.validate();
  const EnvSpec env = config.load_env();
  const auto seed = config.seeds.front();
  const auto variant = config.variants.front();
  const PreparedData data = prepare_data(config, env, seed);
  const CellResult cell = run_cell(config, env, data, variant, seed);
  if (!cell.ok) throw TrainingError(cell.error);
  save_checkpoint(out, *cell.q, seed);
  std::cout << to_string(variant) << " seed " << seed << ": " << cell.steps_completed
            << " steps, mean_kl " << format_number(cell.mean_kl) << ", checkpoint " << out << '\n';
  print_stats("greedy", cell.greedy);
  return 0;
}

int cmd_evaluate(const ConfigFlags& flags, const std::string& checkpoint_path) {
  const ExperimentConfig raw = flags.load();
  const EnvSpec env = raw.load_env();
  const ExperimentConfig config = raw.resolved(env);
  const auto seed = config.seeds.front();
  const PreparedData data = prepare_data(config, env, seed);
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  AlgoConfig algo = config.algo;
  algo.variant = config.variants.front();
  algo.seed = seed;
  const auto environment = make_environment(env);
  for (ActMode mode : {ActMode::greedy, ActMode::sample}) {
    const PolicyFn policy = [&](const State& s, Rng& rng) {
      return act(algo, checkpoint.q, *data.prior, s, mode, rng);
    };
    const auto stats = evaluate_policy(*environment, policy, config.eval_episodes,
                                       mix_seed(seed, mode == ActMode::greedy ? 60 : 61), algo.reward);
    print_stats(mode == ActMode::greedy ? "greedy" : "sample", stats);
  }
  return 0;
}

int cmd_run(const ConfigFlags& flags) {
  const ExperimentConfig config = flags.load();
  const EvalReport report = run_experiment(config);
  emit_reports(report, config.output_dir);
  std::size_t failed = 0;
  for (const auto& c : report.cells) failed += c.ok ? 0 : 1;
  std::cout << report.cells.size() << " cells, " << failed << " failed; reports in "
            << config.output_dir.string() << '\n';
  for (const auto& n : report.notices) std::cout << "note: " << n << '\n';
  return failed == 0 ? 0 : 3;
}

int cmd_relabel(const std::string& in, const std::string& out, const std::string& spec_text,
                const std::string& env_path) {
  const Batch batch = load_batch(in);
  DialogConfig dialog = DialogConfig::defaults();
  if (!env_path.empty()) {
    const EnvSpec env = load_env_spec(env_path);
    if (!env.dialog()) throw UsageError("relabel needs a dialog env spec");
    dialog = *env.dialog();
  }
  const DialogEnvironment scorer_source(dialog);
  const Batch relabeled =
      rewards::relabel_batch(batch, parse_reward_spec(spec_text), scorer_source.scorers());
  save_batch(out, relabeled);
  std::cout << "relabeled " << relabeled.size() << " transitions -> " << out << '\n';
  return 0;
}

int cmd_export_env(const std::string& builtin, const std::string& out) {
  EnvSpec spec{builtin, DialogConfig::defaults()};
  if (builtin == "chain") spec = EnvSpec{"chain", make_chain()};
  else if (builtin == "gridworld4x4") spec = EnvSpec{"gridworld4x4", make_gridworld(4, 4)};
  else if (builtin != "dialog") throw UsageError("unknown builtin env '" + builtin + "'");
  const std::string json = env_spec_to_json(spec);
  if (out.empty() || out == "-") {
    std::cout << json;
  } else {
    std::ofstream file(out, std::ios::binary);
    if (!(file << json)) throw UsageError("cannot write " + out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"batchrl: batch reinforcement learning experiments"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, eval_flags, run_flags;
  std::string batch_out, checkpoint_out, checkpoint_in, relabel_in, relabel_out, relabel_spec,
      relabel_env, builtin, export_out;
  std::uint64_t batch_seed = 0;

  auto* gen = app.add_subcommand("generate-batch", "roll out behavior policies into a batch file");
  gen_flags.attach(gen);
  gen->add_option("--out", batch_out, "batch file to write")->required();
  gen->add_option("--seed", batch_seed, "data seed");

  auto* train = app.add_subcommand("train", "train one variant and save a checkpoint");
  train_flags.attach(train);
  train->add_option("--out", checkpoint_out, "checkpoint file to write")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint by fresh rollouts");
  eval_flags.attach(evaluate);
  evaluate->add_option("--checkpoint", checkpoint_in, "checkpoint file")->required();

  auto* run = app.add_subcommand("run", "train and evaluate every (variant, seed) cell");
  run_flags.attach(run);

  auto* relabel = app.add_subcommand("relabel", "recompute dialog rewards under a new spec");
  relabel->add_option("--in", relabel_in, "input batch")->required();
  relabel->add_option("--out", relabel_out, "output batch")->required();
  relabel->add_option("--reward", relabel_spec, "'dialog' or channel:weight,...")->required();
  relabel->add_option("--env", relabel_env, "dialog env spec (defaults to the built-in one)");

  auto* export_env = app.add_subcommand("export-env", "write a built-in env spec as JSON");
  export_env->add_option("builtin", builtin, "chain | gridworld4x4 | dialog")->required();
  export_env->add_option("--out", export_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate_batch(gen_flags, batch_out, batch_seed);
    if (*train) return cmd_train(train_flags, checkpoint_out);
    if (*evaluate) return cmd_evaluate(eval_flags, checkpoint_in);
    if (*run) return cmd_run(run_flags);
    if (*relabel) return cmd_relabel(relabel_in, relabel_out, relabel_spec, relabel_env);
    if (*export_env) return cmd_export_env(builtin, export_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
