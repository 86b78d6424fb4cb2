#include "batchrl/types.hpp"

#include <cmath>
#include <set>

#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

std::set<std::string> channel_set(const RewardMap& rewards) {
  std::set<std::string> names;
  for (const auto& [name, _] : rewards) names.insert(name);
  return names;
}

}  // namespace

Batch::Batch(std::vector<Transition> transitions, std::size_t action_count,
             std::map<std::string, double> metadata)
    : transitions_(std::move(transitions)),
      action_count_(action_count),
      metadata_(std::move(metadata)) {
  if (action_count_ == 0) throw UsageError("Batch: action_count must be positive");
  if (!transitions_.empty()) {
    const auto channels = channel_set(transitions_.front().rewards);
    for (std::size_t i = 0; i < transitions_.size(); ++i) {
      const auto& t = transitions_[i];
      if (t.action >= action_count_) {
        throw UsageError("Batch: transition " + std::to_string(i) + " has action " +
                         std::to_string(t.action) + " >= action_count " +
                         std::to_string(action_count_));
      }
      if (channel_set(t.rewards) != channels) {
        throw UsageError("Batch: transition " + std::to_string(i) +
                         " declares a different set of reward channels");
      }
    }
  }
  if (!metadata_.empty()) {
    double sum = 0.0;
    for (const auto& [_, fraction] : metadata_) {
      if (fraction < 0.0) throw UsageError("Batch: negative metadata fraction");
      sum += fraction;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw UsageError("Batch: metadata fractions sum to " + std::to_string(sum));
    }
  }
}

std::vector<std::string> Batch::reward_channels() const {
  std::vector<std::string> names;
  if (transitions_.empty()) return names;
  for (const auto& [name, _] : transitions_.front().rewards) names.push_back(name);
  return names;
}

std::map<std::string, double> behavior_proportions(std::span<const Transition> transitions) {
  std::map<std::string, double> counts;
  for (const auto& t : transitions) {
    if (!t.behavior_model.empty()) counts[t.behavior_model] += 1.0;
  }
  double total = 0.0;
  for (const auto& [_, c] : counts) total += c;
  for (auto& [_, c] : counts) c /= total;
  return counts;
}

Trajectory::Trajectory(std::vector<TrajectoryStep> steps) {
  for (auto& s : steps) push_back(std::move(s));
}

void Trajectory::push_back(TrajectoryStep step) {
  for (const auto& [name, value] : step.rewards) episode_return_[name] += value;
  steps_.push_back(std::move(step));
}

ActionDistribution::ActionDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw UsageError("ActionDistribution: empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw UsageError("ActionDistribution: negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw UsageError("ActionDistribution: probabilities sum to " + std::to_string(sum));
  }
}

ActionDistribution ActionDistribution::uniform(std::size_t action_count) {
  if (action_count == 0) throw UsageError("ActionDistribution::uniform: zero actions");
  return ActionDistribution(
      std::vector<double>(action_count, 1.0 / static_cast<double>(action_count)));
}

}  // namespace batchrl
