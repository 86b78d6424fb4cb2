#include "batchrl/environment.hpp"

#include <algorithm>
#include <cmath>

#include "batchrl/errors.hpp"

namespace batchrl {

TabularEnvironment::TabularEnvironment(TabularMDP mdp) : mdp_(std::move(mdp)) {}

std::unique_ptr<Environment> TabularEnvironment::clone() const {
  return std::make_unique<TabularEnvironment>(*this);
}

State TabularEnvironment::reset(Rng&) {
  current_ = mdp_.start_state();
  steps_ = 0;
  return mdp_.state(current_);
}

StepOutcome TabularEnvironment::step(ActionIndex action, Rng& rng) {
  if (action >= mdp_.action_count()) throw UsageError("TabularEnvironment: action out of range");
  if (mdp_.is_terminal(current_)) throw UsageError("TabularEnvironment: episode already ended");
  std::vector<double> row(mdp_.state_count());
  for (std::size_t next = 0; next < row.size(); ++next) {
    row[next] = mdp_.probability(current_, action, next);
  }
  const std::size_t next = sample_categorical(row, rng);
  StepOutcome outcome;
  outcome.rewards["reward"] = mdp_.reward(current_, action);
  current_ = next;
  ++steps_;
  outcome.next_state = mdp_.state(next);
  outcome.terminal = mdp_.is_terminal(next);
  outcome.done = outcome.terminal || steps_ >= mdp_.max_episode_steps();
  return outcome;
}

std::vector<Transition> rollout_episode(Environment& env, const PolicyFn& policy, Rng& rng,
                                        const std::string& behavior_model) {
  std::vector<Transition> episode;
  State state = env.reset(rng);
  while (true) {
    const ActionIndex action = policy(state, rng);
    StepOutcome outcome = env.step(action, rng);
    Transition t;
    t.state = state;
    t.action = action;
    t.rewards = std::move(outcome.rewards);
    t.next_state = outcome.next_state;
    t.terminal = outcome.terminal;
    t.behavior_model = behavior_model;
    t.context = std::move(outcome.context);
    episode.push_back(std::move(t));
    if (outcome.done) break;
    state = std::move(outcome.next_state);
  }
  env.finish_episode(episode);
  return episode;
}

std::vector<Trajectory> to_trajectories(std::span<const std::vector<Transition>> episodes) {
  std::vector<Trajectory> trajectories;
  for (const auto& episode : episodes) {
    Trajectory trajectory;
    for (const auto& t : episode) trajectory.push_back({t.state, t.action, t.rewards});
    trajectories.push_back(std::move(trajectory));
  }
  return trajectories;
}

std::vector<Trajectory> collect_demonstrations(const Environment& env, const PolicyFn& policy,
                                               std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw UsageError("collect_demonstrations: zero episodes");
  std::vector<std::vector<Transition>> rollouts;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(mix_seed(seed, e));
    auto instance = env.clone();
    rollouts.push_back(rollout_episode(*instance, policy, rng));
  }
  return to_trajectories(rollouts);
}

ActionDistribution BehaviorPolicy::distribution(const State& state) const {
  if (!model) throw UsageError("BehaviorPolicy: no model");
  if (!(temperature > 0.0)) throw UsageError("BehaviorPolicy: temperature must be > 0");
  const ActionDistribution base = model->evaluate(state);
  std::vector<double> weights(base.size());
  for (std::size_t a = 0; a < base.size(); ++a) {
    const bool excluded =
        excluded_actions.contains(a) || excluded_pairs.contains({state.id, a});
    weights[a] = excluded || base[a] == 0.0 ? 0.0 : std::pow(base[a], 1.0 / temperature);
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) {
    throw UsageError("BehaviorPolicy '" + model_id + "': no admissible action at state " +
                     std::to_string(state.id));
  }
  for (double& w : weights) w /= total;
  return ActionDistribution(std::move(weights));
}

Batch generate_batch(const Environment& env, std::span<const BehaviorPolicy> behaviors,
                     std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw UsageError("generate_batch: zero episodes");
  if (behaviors.empty()) throw UsageError("generate_batch: no behavior policies");
  double fraction_sum = 0.0;
  for (const auto& b : behaviors) {
    if (!(b.fraction >= 0.0)) throw UsageError("generate_batch: negative fraction");
    if (b.model_id.empty()) throw UsageError("generate_batch: behavior policy without model id");
    fraction_sum += b.fraction;
  }
  if (std::abs(fraction_sum - 1.0) > 1e-9) throw UsageError("generate_batch: fractions must sum to 1");

  // Largest-remainder allocation of episodes to policies.
  std::vector<std::size_t> allotted(behaviors.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < behaviors.size(); ++i) {
    const double exact = behaviors[i].fraction * static_cast<double>(episodes);
    allotted[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += allotted[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t k = 0; assigned < episodes; ++k, ++assigned) ++allotted[remainders[k].second];

  std::vector<Transition> transitions;
  std::map<std::string, double> metadata;
  std::size_t episode_index = 0;
  for (std::size_t i = 0; i < behaviors.size(); ++i) {
    const BehaviorPolicy& behavior = behaviors[i];
    if (behavior.model->action_count() != env.action_count()) {
      throw UsageError("generate_batch: behavior policy action count does not match environment");
    }
    PolicyFn policy = [&behavior](const State& state, Rng& rng) {
      const ActionDistribution dist = behavior.distribution(state);
      return sample_categorical(dist.probs(), rng);
    };
    for (std::size_t e = 0; e < allotted[i]; ++e, ++episode_index) {
      Rng rng(mix_seed(seed, episode_index));
      auto instance = env.clone();
      auto episode = rollout_episode(*instance, policy, rng, behavior.model_id);
      std::move(episode.begin(), episode.end(), std::back_inserter(transitions));
    }
    metadata[behavior.model_id] +=
        static_cast<double>(allotted[i]) / static_cast<double>(episodes);
  }
  std::erase_if(metadata, [](const auto& entry) { return entry.second == 0.0; });
  return Batch(std::move(transitions), env.action_count(), std::move(metadata));
}

CoverageReport coverage(const Batch& batch, const TabularMDP& mdp) {
  CoverageReport report;
  report.counts.assign(mdp.state_count() * mdp.action_count(), 0);
  for (const auto& t : batch.transitions()) {
    if (t.state.id < 0 || static_cast<std::size_t>(t.state.id) >= mdp.state_count()) {
      throw UsageError("coverage: batch state outside the MDP");
    }
    ++report.counts[static_cast<std::size_t>(t.state.id) * mdp.action_count() + t.action];
  }
  const auto reachable = mdp.reachable();
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    if (!reachable[s] || mdp.is_terminal(s)) continue;
    for (std::size_t a = 0; a < mdp.action_count(); ++a) {
      ++report.reachable;
      if (report.counts[s * mdp.action_count() + a] > 0) ++report.covered;
    }
  }
  return report;
}

}  // namespace batchrl
