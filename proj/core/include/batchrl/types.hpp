#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace batchrl {

using ActionIndex = std::size_t;

// Rewards are kept per named channel so a stored batch can be relabeled later.
// std::map keeps channel order stable for serialization.
using RewardMap = std::map<std::string, double>;

// Free-form text context attached to transitions by environments that
// support post-hoc reward recomputation (the dialog environment).
using ContextMap = std::map<std::string, std::string>;

// A state carries an integer id for tabular approximators and a feature
// vector for networks. Environments fill in both.
struct State {
  std::int64_t id = 0;
  std::vector<double> features;

  friend bool operator==(const State&, const State&) = default;
};

struct Transition {
  State state;
  ActionIndex action = 0;
  RewardMap rewards;
  State next_state;
  // next_state is kept for bookkeeping but never bootstrapped from when set.
  bool terminal = false;
  std::string behavior_model;
  ContextMap context;

  friend bool operator==(const Transition&, const Transition&) = default;
};

// Immutable set of transitions plus provenance (model id -> fraction of batch).
class Batch {
 public:
  Batch(std::vector<Transition> transitions, std::size_t action_count,
        std::map<std::string, double> metadata = {});

  const std::vector<Transition>& transitions() const { return transitions_; }
  std::size_t size() const { return transitions_.size(); }
  std::size_t action_count() const { return action_count_; }
  const std::map<std::string, double>& metadata() const { return metadata_; }
  // Channel names shared by every transition.
  std::vector<std::string> reward_channels() const;

  friend bool operator==(const Batch&, const Batch&) = default;

 private:
  std::vector<Transition> transitions_;
  std::size_t action_count_;
  std::map<std::string, double> metadata_;
};

// Realized behavior-model proportions, counted per transition.
std::map<std::string, double> behavior_proportions(std::span<const Transition> transitions);

struct TrajectoryStep {
  State state;
  ActionIndex action = 0;
  RewardMap rewards;
};

class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<TrajectoryStep> steps);

  void push_back(TrajectoryStep step);
  const std::vector<TrajectoryStep>& steps() const { return steps_; }
  // Undiscounted per-channel sum over steps.
  const RewardMap& episode_return() const { return episode_return_; }

 private:
  std::vector<TrajectoryStep> steps_;
  RewardMap episode_return_;
};

// Probability vector over actions at one state. Construction validates
// non-negativity and normalization (1 +- 1e-9).
class ActionDistribution {
 public:
  explicit ActionDistribution(std::vector<double> probs);

  static ActionDistribution uniform(std::size_t action_count);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

}  // namespace batchrl
