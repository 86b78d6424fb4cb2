#include "batchrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "batchrl/batch_io.hpp"
#include "batchrl/dialog.hpp"
#include "batchrl/distribution.hpp"
#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const auto part = trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (!part.empty()) parts.emplace_back(part);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

double to_double(std::string_view key, std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw UsageError("config '" + std::string(key) + "': not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::uint64_t to_uint(std::string_view key, std::string_view text) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw UsageError("config '" + std::string(key) + "': not a non-negative integer: '" +
                     std::string(text) + "'");
  }
  return value;
}

bool to_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw UsageError("config '" + std::string(key) + "': not a boolean: '" + std::string(text) + "'");
}

// "0-9,12" -> 0..9, 12
std::vector<std::uint64_t> to_seed_list(std::string_view key, std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : split(text, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(to_uint(key, part));
      continue;
    }
    const auto lo = to_uint(key, trim(std::string_view(part).substr(0, dash)));
    const auto hi = to_uint(key, trim(std::string_view(part).substr(dash + 1)));
    if (hi < lo) throw UsageError("config '" + std::string(key) + "': empty range " + part);
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  return seeds;
}

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view value) {
  std::filesystem::path p{std::string(value)};
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

std::string expand_seed(const std::filesystem::path& path, std::uint64_t seed) {
  std::string s = path.string();
  const auto pos = s.find("{seed}");
  if (pos != std::string::npos) s.replace(pos, 6, std::to_string(seed));
  return s;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<Trajectory> as_trajectories(std::span<const Transition> transitions) {
  Trajectory t;
  for (const auto& tr : transitions) t.push_back({tr.state, tr.action, tr.rewards});
  return {std::move(t)};
}

NetworkPriorOptions network_options(const ExperimentConfig& config, std::uint64_t seed) {
  NetworkPriorOptions options;
  options.hidden = config.hidden;
  options.dropout_rate = config.dropout_rate;
  options.max_epochs = config.prior_epochs;
  options.learning_rate = config.prior_learning_rate;
  options.self_normalization = config.prior_self_normalization;
  options.seed = seed;
  return options;
}

ActionIndex resolve_action(const std::string& name, const EnvSpec& env) {
  if (!name.empty() && std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::stoull(name);
  }
  if (const auto* d = env.dialog()) return DialogEnv(*d).token_index(name);
  throw UsageError("exclude_actions: '" + name + "' is not an action index");
}

std::vector<std::pair<std::size_t, ActionIndex>> reachable_pairs(const TabularMDP& mdp) {
  const auto reachable = mdp.reachable();
  std::vector<std::pair<std::size_t, ActionIndex>> pairs;
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    if (!reachable[s] || mdp.is_terminal(s)) continue;
    for (ActionIndex a = 0; a < mdp.action_count(); ++a) pairs.emplace_back(s, a);
  }
  return pairs;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

constexpr const char* kPlotScript = R"py(import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent

curves = defaultdict(lambda: defaultdict(list))
with open(out / "kl_curve.csv") as f:
    for row in csv.DictReader(f):
        curves[row["variant"]][int(row["step"])].append(float(row["mean_kl"]))

fig, ax = plt.subplots(figsize=(6, 4))
for variant, by_step in curves.items():
    steps = sorted(by_step)
    ax.plot(steps, [sum(by_step[s]) / len(by_step[s]) for s in steps], label=variant)
ax.set_xlabel("training step")
ax.set_ylabel("KL(pi || prior)")
ax.legend()
fig.tight_layout()
fig.savefig(out / "kl_curves.png", dpi=150)

returns = defaultdict(lambda: defaultdict(list))
with open(out / "summary.csv") as f:
    for row in csv.DictReader(f):
        if row["status"] != "ok":
            continue
        for key, value in row.items():
            if key.startswith("greedy_return_") and value:
                returns[key[len("greedy_return_"):]][row["variant"]].append(float(value))

if returns:
    channels = sorted(returns)
    variants = sorted({v for c in channels for v in returns[c]})
    width = 0.8 / max(1, len(variants))
    fig, ax = plt.subplots(figsize=(max(6, len(channels) * 1.5), 4))
    for i, variant in enumerate(variants):
        heights = [sum(returns[c][variant]) / len(returns[c][variant]) if returns[c][variant] else 0
                   for c in channels]
        ax.bar([x + i * width for x in range(len(channels))], heights, width, label=variant)
    ax.set_xticks([x + 0.4 - width / 2 for x in range(len(channels))])
    ax.set_xticklabels(channels, rotation=30, ha="right")
    ax.set_ylabel("mean return (greedy)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "reward_channels.png", dpi=150)
)py";

}  // namespace

// ---------------------------------------------------------------- config

rewards::RewardSpec parse_reward_spec(std::string_view text) {
  text = trim(text);
  if (text == "dialog") return rewards::RewardSpec::dialog_default();
  rewards::RewardSpec spec;
  for (const auto& part : split(text, ',')) {
    const auto colon = part.find(':');
    const std::string name{trim(std::string_view(part).substr(0, colon))};
    if (name.empty()) throw UsageError("reward spec: empty channel name in '" + std::string(text) + "'");
    const double weight =
        colon == std::string::npos ? 1.0 : to_double("reward", trim(std::string_view(part).substr(colon + 1)));
    spec.weights[name] = weight;
  }
  if (spec.weights.empty()) throw UsageError("reward spec is empty");
  return spec;
}

std::string reward_spec_to_string(const rewards::RewardSpec& spec) {
  std::string out;
  for (const auto& [name, weight] : spec.weights) {
    if (!out.empty()) out += ',';
    out += name + ':' + format_number(weight);
  }
  return out;
}

void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value,
                   const std::filesystem::path& base) {
  auto size = [&] { return static_cast<std::size_t>(to_uint(key, value)); };
  auto real = [&] { return to_double(key, value); };
  auto flag = [&] { return to_bool(key, value); };
  AlgoConfig& a = c.algo;

  if (key == "env") c.env_path = resolve(base, value);
  else if (key == "variants") {
    c.variants.clear();
    for (const auto& v : split(value, ',')) c.variants.push_back(variant_from_string(v));
  } else if (key == "seeds") c.seeds = to_seed_list(key, value);
  else if (key == "training_steps") c.training_steps = size();
  else if (key == "minibatch_size") c.minibatch_size = size();
  else if (key == "batch") c.batch_path = resolve(base, value);
  else if (key == "save_batches") c.save_batches = flag();
  else if (key == "batch_episodes") c.batch_episodes = size();
  else if (key == "behavior_temperature") c.behavior_temperature = real();
  else if (key == "exclude_pairs") {
    c.exclude_pairs.clear();
    for (const auto& p : split(value, ',')) {
      const auto colon = p.find(':');
      if (colon == std::string::npos) throw UsageError("exclude_pairs: expected state:action, got " + p);
      c.exclude_pairs.emplace_back(to_uint(key, trim(std::string_view(p).substr(0, colon))),
                                   to_uint(key, trim(std::string_view(p).substr(colon + 1))));
    }
  } else if (key == "exclude_actions") c.exclude_actions = split(value, ',');
  else if (key == "prior_kind") {
    if (value == "counts") c.prior_kind = PriorModel::Kind::tabular_counts;
    else if (value == "network") c.prior_kind = PriorModel::Kind::feedforward;
    else throw UsageError("prior_kind must be counts or network");
  } else if (key == "prior_smoothing") c.prior_smoothing = real();
  else if (key == "prior_members") c.prior_members = size();
  else if (key == "demo_episodes") c.demo_episodes = size();
  else if (key == "demo_noise") c.demo_noise = real();
  else if (key == "prior_epochs") c.prior_epochs = size();
  else if (key == "prior_learning_rate") c.prior_learning_rate = real();
  else if (key == "prior_self_normalization") c.prior_self_normalization = real();
  else if (key == "hidden") {
    c.hidden.clear();
    for (const auto& h : split(value, ',')) c.hidden.push_back(to_uint(key, h));
  } else if (key == "dropout_rate") c.dropout_rate = real();
  else if (key == "q_kind") {
    if (value == "auto") c.q_kind = QKind::automatic;
    else if (value == "tabular") c.q_kind = QKind::tabular;
    else if (value == "network") c.q_kind = QKind::network;
    else throw UsageError("q_kind must be auto, tabular or network");
  } else if (key == "q_init") {
    if (value == "prior") c.q_init = QInit::prior;
    else if (value == "zero") c.q_init = QInit::zero;
    else if (value == "random") c.q_init = QInit::random;
    else throw UsageError("q_init must be prior, zero or random");
  } else if (key == "eval_episodes") c.eval_episodes = size();
  else if (key == "eval_mode") {
    if (value == "greedy") c.eval_mode = ActMode::greedy;
    else if (value == "sample") c.eval_mode = ActMode::sample;
    else throw UsageError("eval_mode must be greedy or sample");
  } else if (key == "early_stopping") c.early_stopping = flag();
  else if (key == "eval_every") c.eval_every = size();
  else if (key == "holdout_episodes") c.holdout_episodes = size();
  else if (key == "bias_pairs") {
    if (value == "uncovered") c.bias_pairs = BiasPairs::uncovered;
    else if (value == "all") c.bias_pairs = BiasPairs::all;
    else throw UsageError("bias_pairs must be uncovered or all");
  } else if (key == "workers") c.workers = size();
  else if (key == "output_dir") c.output_dir = resolve(base, value);
  else if (key == "verbose") c.verbose = flag();
  else if (key == "gamma") a.gamma = real();
  else if (key == "reward_scale") a.reward_scale = real();
  else if (key == "mc_passes") a.mc_passes = size();
  else if (key == "dbcq_candidates") a.dbcq_candidates = size();
  else if (key == "dbcq_mode") {
    if (value == "sample") a.dbcq_mode = CandidateMode::sample;
    else if (value == "top_k") a.dbcq_mode = CandidateMode::top_k;
    else throw UsageError("dbcq_mode must be sample or top_k");
  } else if (key == "use_model_averaged_prior") a.use_model_averaged_prior = flag();
  else if (key == "scale_baseline_rewards") a.scale_baseline_rewards = flag();
  else if (key == "kl_q_bootstrap") {
    if (value == "mc_min_max") a.kl_q_bootstrap = KlBootstrap::mc_min_max;
    else if (value == "hard_max") a.kl_q_bootstrap = KlBootstrap::hard_max;
    else throw UsageError("kl_q_bootstrap must be mc_min_max or hard_max");
  } else if (key == "learning_rate") a.learning_rate = real();
  else if (key == "polyak_rate") a.polyak_rate = real();
  else if (key == "clip_norm") a.clip_norm = real();
  else if (key == "optimizer") {
    if (value == "adam") a.optimizer = OptimizerKind::adam;
    else if (value == "sgd") a.optimizer = OptimizerKind::sgd;
    else throw UsageError("optimizer must be adam or sgd");
  } else if (key == "clip_mode") {
    if (value == "global_norm") a.clip_mode = ClipMode::global_norm;
    else if (value == "elementwise") a.clip_mode = ClipMode::elementwise;
    else throw UsageError("clip_mode must be global_norm or elementwise");
  } else if (key == "tabular_assign") a.tabular_assign = flag();
  else if (key == "reward") {
    a.reward = parse_reward_spec(value);
    c.reward_set = true;
  }
  else throw UsageError("unknown config key '" + std::string(key) + "'");
}

ExperimentConfig parse_experiment_config(std::string_view text, const std::filesystem::path& base) {
  ExperimentConfig config;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(config, trim(view.substr(0, eq)), trim(view.substr(eq + 1)), base);
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig config = parse_experiment_config(text.str(), path.parent_path());
  if (const char* dir = std::getenv("BATCHRL_OUTPUT_DIR"); dir != nullptr && *dir != '\0') {
    config.output_dir = dir;
  }
  return config;
}

EnvSpec ExperimentConfig::load_env() const {
  if (env) return *env;
  if (env_path.empty()) throw UsageError("config: no env given");
  return load_env_spec(env_path);
}

ExperimentConfig ExperimentConfig::resolved(const EnvSpec& env_spec) const {
  ExperimentConfig copy = *this;
  if (!reward_set) {
    copy.algo.reward = env_spec.dialog() ? rewards::RewardSpec::dialog_default()
                                         : rewards::RewardSpec::single("reward");
    copy.reward_set = true;
  }
  return copy;
}

void ExperimentConfig::validate() const {
  if (variants.empty()) throw UsageError("config: at least one variant is required");
  if (seeds.empty()) throw UsageError("config: at least one seed is required");
  if (!env && !std::filesystem::exists(env_path)) {
    throw UsageError("config: env spec not found: " + env_path.string());
  }
  if (!batch_path.empty() && batch_path.string().find("{seed}") == std::string::npos &&
      !std::filesystem::exists(batch_path)) {
    throw UsageError("config: batch not found: " + batch_path.string());
  }
  if (batch_path.empty() && batch_episodes == 0) throw UsageError("config: batch_episodes must be > 0");
  if (!(behavior_temperature > 0.0)) throw UsageError("config: behavior_temperature must be > 0");
  if (prior_members == 0) throw UsageError("config: prior_members must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("config: dropout_rate must be in [0, 1)");
  if (early_stopping && eval_every == 0) throw UsageError("config: eval_every must be > 0");
  if (eval_episodes == 0) throw UsageError("config: eval_episodes must be > 0");
  if (workers == 0) throw UsageError("config: workers must be >= 1");
  algo.validate();
}

// ---------------------------------------------------------------- data

PreparedData prepare_data(const ExperimentConfig& unresolved, const EnvSpec& env, std::uint64_t seed,
                          bool relabel) {
  const ExperimentConfig config = unresolved.resolved(env);
  const auto environment = make_environment(env);
  const std::size_t A = environment->action_count();

  std::vector<ActionIndex> excluded;
  for (const auto& name : config.exclude_actions) excluded.push_back(resolve_action(name, env));

  std::vector<std::shared_ptr<const PriorModel>> members;
  std::optional<Batch> batch;
  if (!config.batch_path.empty()) batch = load_batch(expand_seed(config.batch_path, seed));

  if (const auto* mdp = env.tabular()) {
    if (!batch) {
      BehaviorPolicy behavior;
      behavior.model = std::make_shared<PriorModel>(PriorModel::from_counts(
          "uniform", mdp->state_count(), A, std::vector<double>(mdp->state_count() * A, 0.0), 1.0));
      behavior.model_id = "uniform";
      behavior.temperature = config.behavior_temperature;
      behavior.excluded_actions = {excluded.begin(), excluded.end()};
      for (const auto& [s, a] : config.exclude_pairs) {
        behavior.excluded_pairs.insert({mdp->state(s).id, a});
      }
      batch = generate_batch(*environment, std::span(&behavior, 1), config.batch_episodes,
                             mix_seed(seed, 1));
    }
    std::map<std::string, std::vector<Transition>> groups;
    for (const auto& t : batch->transitions()) {
      groups[config.algo.use_model_averaged_prior ? t.behavior_model : "prior"].push_back(t);
    }
    std::uint64_t member_index = 0;
    for (const auto& [id, transitions] : groups) {
      if (config.prior_kind == PriorModel::Kind::feedforward) {
        members.push_back(std::make_shared<PriorModel>(fit_mle_network(
            as_trajectories(transitions), A, network_options(config, mix_seed(seed, 30 + member_index++)),
            id)));
      } else {
        members.push_back(std::make_shared<PriorModel>(fit_mle_counts(
            as_trajectories(transitions), mdp->state_count(), A, config.prior_smoothing, id)));
      }
    }
  } else {
    const DialogEnvironment dialog(*env.dialog());
    for (std::size_t m = 0; m < config.prior_members; ++m) {
      const auto demos =
          collect_dialog_demonstrations(dialog, config.demo_episodes, mix_seed(seed, 20 + m),
                                        config.demo_noise);
      members.push_back(std::make_shared<PriorModel>(fit_mle_network(
          demos, A, network_options(config, mix_seed(seed, 30 + m)), "prior" + std::to_string(m))));
    }
    if (!batch) {
      std::vector<BehaviorPolicy> behaviors;
      double assigned = 0.0;
      for (std::size_t m = 0; m < members.size(); ++m) {
        BehaviorPolicy b;
        b.model = members[m];
        b.model_id = members[m]->model_id();
        b.temperature = config.behavior_temperature;
        b.fraction = m + 1 == members.size() ? 1.0 - assigned : 1.0 / static_cast<double>(members.size());
        assigned += b.fraction;
        b.excluded_actions = {excluded.begin(), excluded.end()};
        behaviors.push_back(std::move(b));
      }
      batch = generate_batch(dialog, behaviors, config.batch_episodes, mix_seed(seed, 1));
    }
  }

  if (config.save_batches && config.batch_path.empty()) {
    save_batch(config.output_dir / ("batch_seed" + std::to_string(seed) + ".jsonl"), *batch);
  }
  if (env.dialog() && relabel) {
    const DialogEnvironment dialog(*env.dialog());
    batch = rewards::relabel_batch(*batch, config.algo.reward, dialog.scorers());
  }

  std::shared_ptr<const PolicyPrior> prior = members.front();
  if (config.algo.use_model_averaged_prior && members.size() > 1) {
    prior = std::make_shared<AveragedPrior>(members, scores_from_metadata(batch->metadata(), members));
  }
  return PreparedData{std::move(*batch), std::move(members), std::move(prior)};
}

// ---------------------------------------------------------------- evaluation

EvalStats evaluate_policy(const Environment& env, const PolicyFn& policy, std::size_t episodes,
                          std::uint64_t seed, const rewards::RewardSpec& spec) {
  if (episodes == 0) throw UsageError("evaluate_policy: zero episodes");
  EvalStats stats;
  for (const auto& ch : env.reward_channels()) stats.channels[ch] = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(mix_seed(seed, e));
    auto instance = env.clone();
    const auto episode = rollout_episode(*instance, policy, rng);
    RewardMap totals;
    for (const auto& ch : env.reward_channels()) totals[ch] = 0.0;
    for (const auto& t : episode) {
      for (const auto& [ch, r] : t.rewards) totals[ch] += r;
    }
    for (const auto& [ch, r] : totals) stats.channels[ch] += r;
    stats.total_return += rewards::total_reward(totals, spec);
    stats.mean_length += static_cast<double>(episode.size());
  }
  const double n = static_cast<double>(episodes);
  for (auto& [ch, r] : stats.channels) r /= n;
  stats.total_return /= n;
  stats.mean_length /= n;
  return stats;
}

TabularQ tabulate(const QFunction& q, const TabularMDP& mdp) {
  TabularQ table(mdp.state_count(), mdp.action_count());
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    const auto row = q.values(mdp.state(s));
    for (ActionIndex a = 0; a < mdp.action_count(); ++a) table.at(s, a) = row.at(a);
  }
  return table;
}

TabularMDP with_gamma(const TabularMDP& mdp, double gamma) {
  return TabularMDP(mdp.name(), mdp.state_count(), mdp.action_count(), mdp.kernel(), mdp.rewards(),
                    mdp.terminals(), gamma, mdp.start_state(), mdp.max_episode_steps());
}

double overestimation_bias(const TabularQ& learned, const std::vector<ActionDistribution>& policy,
                           const TabularMDP& mdp,
                           std::span<const std::pair<std::size_t, ActionIndex>> pairs,
                           EvaluationMode mode, const PolicyPrior* prior, double reward_scale,
                           const std::vector<ActionDistribution>* penalty_policy) {
  if (pairs.empty()) throw UsageError("overestimation_bias: no (s, a) pairs");
  const TabularQ truth =
      policy_evaluation(mdp, policy, mode, prior, reward_scale, 1e-10, 1'000'000, penalty_policy);
  double sum = 0.0;
  for (const auto& [s, a] : pairs) sum += learned.at(s, a) - truth.at(s, a);
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------- cells

PriorInitializedQ build_q(const ExperimentConfig& config, const EnvSpec& env,
                          const PreparedData& data, std::uint64_t seed) {
  const QKind kind = config.q_kind != QKind::automatic ? config.q_kind
                     : env.tabular()                 ? QKind::tabular
                                                     : QKind::network;
  const std::size_t A = data.batch.action_count();
  if (kind == QKind::tabular) {
    const auto* mdp = env.tabular();
    if (mdp == nullptr) throw UsageError("q_kind tabular needs a tabular env");
    TabularQ table(mdp->state_count(), A);
    Rng rng(mix_seed(seed, 40));
    for (std::size_t s = 0; s < mdp->state_count(); ++s) {
      const ActionDistribution p = data.prior->evaluate(mdp->state(s));
      for (ActionIndex a = 0; a < A; ++a) {
        switch (config.q_init) {
          case QInit::prior:
            if (!(p[a] > 0.0)) throw UsageError("q_init prior needs a strictly positive prior");
            table.at(s, a) = std::log(p[a]);
            break;
          case QInit::zero: break;
          case QInit::random: table.at(s, a) = uniform_real(rng, -1.0, 1.0); break;
        }
      }
    }
    QFunction q(std::move(table));
    TargetCopy target = make_target(q, config.algo.polyak_rate);
    return {std::move(q), std::move(target)};
  }

  if (config.q_init == QInit::prior) {
    const auto& first = *data.members.front();
    if (first.kind() != PriorModel::Kind::feedforward) {
      throw UsageError("q_init prior with a network Q needs a network prior; use q_init random");
    }
    return init_q_from_prior(first, config.algo.polyak_rate);
  }
  const std::size_t width = data.batch.transitions().front().state.features.size();
  std::vector<std::size_t> widths{width};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(A);
  auto shapes = mlp_shapes(widths, Activation::relu);
  FeedforwardQ net = config.q_init == QInit::random
                         ? FeedforwardQ::uniform_init(std::move(shapes), config.dropout_rate, mix_seed(seed, 41))
                         : FeedforwardQ(std::move(shapes), config.dropout_rate);
  QFunction q(std::move(net));
  TargetCopy target = make_target(q, config.algo.polyak_rate);
  return {std::move(q), std::move(target)};
}

namespace {

void tabular_diagnostics(CellResult& cell, const ExperimentConfig& config, const TabularMDP& mdp,
                         const PreparedData& data, const AlgoConfig& algo,
                         std::vector<std::string>& notices, std::mutex& notice_mutex) {
  const TabularMDP model = with_gamma(mdp, algo.gamma);
  const TabularQ learned = tabulate(*cell.q, mdp);
  const auto pairs = reachable_pairs(mdp);

  auto max_abs = [&](const TabularQ& oracle) {
    double worst = 0.0;
    for (const auto& [s, a] : pairs) worst = std::max(worst, std::abs(learned.at(s, a) - oracle.at(s, a)));
    return worst;
  };
  if (algo.variant == Variant::batch_q) cell.oracle_error = max_abs(value_iteration(model));
  if (algo.variant == Variant::kl_psi) {
    cell.oracle_error = max_abs(soft_value_iteration(model, *data.prior, algo.reward_scale));
  }

  const auto counts = coverage(data.batch, mdp).counts;
  std::vector<std::pair<std::size_t, ActionIndex>> selected;
  if (config.bias_pairs == BiasPairs::uncovered) {
    for (const auto& [s, a] : pairs) {
      if (counts[s * mdp.action_count() + a] == 0) selected.emplace_back(s, a);
    }
    if (selected.empty()) {
      std::lock_guard lock(notice_mutex);
      const std::string notice = "batch covers every reachable pair; bias averaged over all pairs";
      if (std::find(notices.begin(), notices.end(), notice) == notices.end()) notices.push_back(notice);
    }
  }
  if (selected.empty()) selected = pairs;

  // kl_q acts greedily on Q but is scored with the augmented reward built
  // from softmax(Q); kl_psi acts with softmax(Psi) under the soft backup.
  std::vector<ActionDistribution> policy, penalty;
  EvaluationMode mode = EvaluationMode::plain;
  const std::size_t A = mdp.action_count();
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    const auto row = learned.row(s);
    std::vector<double> probs(A, 0.0);
    switch (algo.variant) {
      case Variant::batch_q:
      case Variant::batch_q_mc: probs[argmax(row)] = 1.0; break;
      case Variant::kl_q:
        probs[argmax(row)] = 1.0;
        penalty.push_back(softmax(row));
        mode = EvaluationMode::kl_penalized;
        break;
      case Variant::dbcq: {
        const ActionDistribution p = data.prior->evaluate(mdp.state(s));
        std::size_t best = A;
        for (ActionIndex a = 0; a < A; ++a) {
          if (p[a] > 0.0 && (best == A || row[a] > row[best])) best = a;
        }
        probs[best == A ? argmax(row) : best] = 1.0;
        break;
      }
      case Variant::kl_psi: {
        const auto pi = softmax(row);
        probs.assign(pi.probs().begin(), pi.probs().end());
        mode = EvaluationMode::soft;
        break;
      }
    }
    policy.emplace_back(std::move(probs));
  }
  cell.overestimation_bias =
      overestimation_bias(learned, policy, model, selected, mode, data.prior.get(), algo.reward_scale,
                          penalty.empty() ? nullptr : &penalty);
}

CellResult run_cell_impl(const ExperimentConfig& unresolved, const EnvSpec& env,
                         const PreparedData& data, Variant variant, std::uint64_t seed,
                         std::vector<std::string>& notices, std::mutex& notice_mutex) {
  const ExperimentConfig config = unresolved.resolved(env);
  const auto started = std::chrono::steady_clock::now();
  CellResult cell;
  cell.variant = variant;
  cell.seed = seed;
  try {
    AlgoConfig algo = config.algo;
    algo.variant = variant;
    algo.seed = seed;
    const auto environment = make_environment(env);
    TrainState state = make_train_state(build_q(config, env, data, seed), data.prior, algo);

    auto policy_for = [&](const QFunction& q, ActMode mode) -> PolicyFn {
      return [&, mode, qp = &q](const State& s, Rng& rng) {
        return act(algo, *qp, *data.prior, s, mode, rng);
      };
    };
    auto holdout = [&](const QFunction& q) {
      return evaluate_policy(*environment, policy_for(q, config.eval_mode), config.holdout_episodes,
                             mix_seed(seed, 62), algo.reward)
          .total_return;
    };

    std::optional<QFunction> best;
    double best_return = 0.0;
    if (config.early_stopping) {
      best = state.q;
      best_return = holdout(state.q);
    }
    TrainingOptions options{config.training_steps, config.minibatch_size, mix_seed(seed, 50)};
    train(state, data.batch, options, algo, [&](const TrainState& s, const StepMetrics&) {
      if (!config.early_stopping) return;
      if (s.step_count % config.eval_every != 0 && s.step_count != config.training_steps) return;
      const double r = holdout(s.q);
      if (r > best_return) {
        best_return = r;
        best = s.q;
        cell.best_step = s.step_count;
      }
    });
    cell.steps_completed = state.step_count;
    if (!config.early_stopping) cell.best_step = state.step_count;
    cell.metrics = std::move(state.metrics);
    if (!cell.metrics.empty()) {
      double sum = 0.0;
      for (const auto& m : cell.metrics) sum += m.mean_kl;
      cell.mean_kl = sum / static_cast<double>(cell.metrics.size());
      cell.final_kl = cell.metrics.back().mean_kl;
    }
    cell.q = best ? std::move(*best) : std::move(state.q);

    cell.greedy = evaluate_policy(*environment, policy_for(*cell.q, ActMode::greedy),
                                  config.eval_episodes, mix_seed(seed, 60), algo.reward);
    cell.sample = evaluate_policy(*environment, policy_for(*cell.q, ActMode::sample),
                                  config.eval_episodes, mix_seed(seed, 61), algo.reward);
    if (const auto* mdp = env.tabular()) {
      tabular_diagnostics(cell, config, *mdp, data, algo, notices, notice_mutex);
    }
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  cell.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return cell;
}

}  // namespace

CellResult run_cell(const ExperimentConfig& config, const EnvSpec& env, const PreparedData& data,
                    Variant variant, std::uint64_t seed) {
  std::vector<std::string> notices;
  std::mutex mutex;
  return run_cell_impl(config, env, data, variant, seed, notices, mutex);
}

const CellResult& EvalReport::cell(Variant variant, std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.variant == variant && c.seed == seed) return c;
  }
  throw UsageError("report has no cell " + std::string(to_string(variant)) + "/" + std::to_string(seed));
}

EvalReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const EnvSpec env = config.load_env();
  check_output_dir(config.output_dir);

  EvalReport report;
  report.channels = make_environment(env)->reward_channels();
  if (!env.tabular()) {
    report.notices.push_back("overestimation bias omitted: no exact oracle for env '" + env.name + "'");
  }

  std::vector<std::optional<PreparedData>> data(config.seeds.size());
  std::vector<std::string> data_errors(config.seeds.size());
  parallel_for(config.seeds.size(), config.workers, [&](std::size_t i) {
    try {
      data[i] = prepare_data(config, env, config.seeds[i]);
    } catch (const std::exception& e) {
      data_errors[i] = std::string("data preparation failed: ") + e.what();
    }
  });

  std::mutex notice_mutex;
  const std::size_t S = config.seeds.size();
  report.cells.resize(config.variants.size() * S);
  parallel_for(report.cells.size(), config.workers, [&](std::size_t i) {
    const Variant variant = config.variants[i / S];
    const std::size_t k = i % S;
    if (!data[k]) {
      CellResult failed;
      failed.variant = variant;
      failed.seed = config.seeds[k];
      failed.ok = false;
      failed.error = data_errors[k];
      report.cells[i] = std::move(failed);
      return;
    }
    report.cells[i] =
        run_cell_impl(config, env, *data[k], variant, config.seeds[k], report.notices, notice_mutex);
    if (config.verbose) {
      const auto& c = report.cells[i];
      std::lock_guard lock(notice_mutex);
      std::cerr << to_string(c.variant) << " seed " << c.seed << ": "
                << (c.ok ? "ok" : "failed: " + c.error) << " (" << c.wall_seconds << " s)\n";
    }
  });
  return report;
}

// ---------------------------------------------------------------- reports

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

void check_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".batchrl_write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok")) throw UsageError("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

void emit_reports(const EvalReport& report, const std::filesystem::path& dir) {
  check_output_dir(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw UsageError("cannot write " + (dir / name).string());
    return out;
  };

  {
    auto out = open("metrics.csv");
    out << "variant,seed,step,loss,mean_kl,mean_target,skipped\n";
    for (const auto& c : report.cells) {
      for (const auto& m : c.metrics) {
        out << to_string(c.variant) << ',' << c.seed << ',' << m.step << ',' << format_number(m.loss)
            << ',' << format_number(m.mean_kl) << ',' << format_number(m.mean_target) << ','
            << m.skipped << '\n';
      }
    }
  }
  {
    auto out = open("kl_curve.csv");
    out << "step,variant,seed,mean_kl\n";
    for (const auto& c : report.cells) {
      for (const auto& m : c.metrics) {
        out << m.step << ',' << to_string(c.variant) << ',' << c.seed << ',' << format_number(m.mean_kl)
            << '\n';
      }
    }
  }
  {
    auto out = open("summary.csv");
    out << "variant,seed,status,steps,best_step,greedy_total_return,sample_total_return";
    for (const auto& ch : report.channels) out << ",greedy_return_" << ch;
    for (const auto& ch : report.channels) out << ",sample_return_" << ch;
    out << ",greedy_mean_length,mean_kl,final_kl,overestimation_bias,oracle_error,error\n";
    for (const auto& c : report.cells) {
      out << to_string(c.variant) << ',' << c.seed << ',' << (c.ok ? "ok" : "failed") << ','
          << c.steps_completed << ',' << c.best_step;
      if (c.ok) {
        out << ',' << format_number(c.greedy.total_return) << ',' << format_number(c.sample.total_return);
        for (const auto& ch : report.channels) out << ',' << format_number(c.greedy.channels.at(ch));
        for (const auto& ch : report.channels) out << ',' << format_number(c.sample.channels.at(ch));
        out << ',' << format_number(c.greedy.mean_length) << ',' << format_number(c.mean_kl) << ','
            << format_number(c.final_kl);
      } else {
        out << ",,";
        for (std::size_t i = 0; i < 2 * report.channels.size(); ++i) out << ',';
        out << ",,,";
      }
      out << ',' << optional_number(c.overestimation_bias) << ',' << optional_number(c.oracle_error)
          << ',' << csv_field(c.error) << '\n';
    }
  }
  {
    auto out = open("timings.csv");
    out << "variant,seed,wall_seconds\n";
    for (const auto& c : report.cells) {
      out << to_string(c.variant) << ',' << c.seed << ',' << format_number(c.wall_seconds) << '\n';
    }
  }
  {
    auto out = open("plot_results.py");
    out << kPlotScript;
  }
  if (!report.notices.empty()) {
    auto out = open("notices.txt");
    for (const auto& n : report.notices) out << n << '\n';
  }
}

}  // namespace batchrl
