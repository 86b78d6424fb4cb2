#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "batchrl/prior.hpp"
#include "batchrl/random.hpp"
#include "batchrl/tabular_mdp.hpp"
#include "batchrl/types.hpp"

namespace batchrl {

struct StepOutcome {
  State next_state;
  RewardMap rewards;
  bool terminal = false;  // true terminal: no bootstrap
  bool done = false;      // episode over (terminal or time limit)
  ContextMap context;
};

// Stateful episodic environment. Instances are cheap; use clone() for one
// instance per rollout.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::unique_ptr<Environment> clone() const = 0;
  virtual std::size_t action_count() const = 0;
  virtual std::vector<std::string> reward_channels() const = 0;
  virtual State reset(Rng& rng) = 0;
  virtual StepOutcome step(ActionIndex action, Rng& rng) = 0;
  // Rewrites rewards that depend on the finished episode (no-op by default).
  virtual void finish_episode(std::vector<Transition>& /*episode*/) const {}
};

// Single reward channel "reward".
class TabularEnvironment final : public Environment {
 public:
  explicit TabularEnvironment(TabularMDP mdp);

  std::unique_ptr<Environment> clone() const override;
  std::size_t action_count() const override { return mdp_.action_count(); }
  std::vector<std::string> reward_channels() const override { return {"reward"}; }
  State reset(Rng& rng) override;
  StepOutcome step(ActionIndex action, Rng& rng) override;

  const TabularMDP& mdp() const { return mdp_; }

 private:
  TabularMDP mdp_;
  std::size_t current_ = 0;
  std::size_t steps_ = 0;
};

using PolicyFn = std::function<ActionIndex(const State&, Rng&)>;

// Rolls out `policy` and returns the finished episode's transitions.
std::vector<Transition> rollout_episode(Environment& env, const PolicyFn& policy, Rng& rng,
                                        const std::string& behavior_model = {});

std::vector<Trajectory> to_trajectories(std::span<const std::vector<Transition>> episodes);

std::vector<Trajectory> collect_demonstrations(const Environment& env, const PolicyFn& policy,
                                               std::size_t episodes, std::uint64_t seed);

// A prior used to generate data, optionally tempered and with actions removed
// from its support (for partial-coverage batches).
struct BehaviorPolicy {
  std::shared_ptr<const PolicyPrior> model;
  std::string model_id;
  double temperature = 1.0;
  double fraction = 1.0;
  std::set<ActionIndex> excluded_actions;
  std::set<std::pair<std::int64_t, ActionIndex>> excluded_pairs;  // (state id, action)

  ActionDistribution distribution(const State& state) const;
};

// Rolls out each behavior policy for its share of `episodes` (largest
// remainder rounding) in order. Metadata holds each model's share of the
// episodes. Reproducible from `seed`.
Batch generate_batch(const Environment& env, std::span<const BehaviorPolicy> behaviors,
                     std::size_t episodes, std::uint64_t seed);

struct CoverageReport {
  std::size_t covered = 0;
  std::size_t reachable = 0;
  double fraction() const {
    return reachable == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(reachable);
  }
  std::vector<std::size_t> counts;  // visits per (s, a), row-major
};

// Fraction of reachable, non-terminal (s, a) pairs that appear in the batch.
CoverageReport coverage(const Batch& batch, const TabularMDP& mdp);

}  // namespace batchrl
