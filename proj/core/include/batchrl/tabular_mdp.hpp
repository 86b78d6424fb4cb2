#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "batchrl/prior.hpp"
#include "batchrl/q_function.hpp"
#include "batchrl/types.hpp"

namespace batchrl {

// Finite MDP with a dense kernel. Terminal states absorb with zero reward
// and have value zero.
class TabularMDP {
 public:
  // kernel is [S][A][S'] flattened, rewards is [S][A] flattened (expected reward).
  TabularMDP(std::string name, std::size_t state_count, std::size_t action_count,
             std::vector<double> kernel, std::vector<double> rewards,
             std::vector<std::size_t> terminals, double gamma, std::size_t start_state = 0,
             std::size_t max_episode_steps = 100);

  const std::string& name() const { return name_; }
  std::size_t state_count() const { return state_count_; }
  std::size_t action_count() const { return action_count_; }
  double gamma() const { return gamma_; }
  std::size_t start_state() const { return start_state_; }
  std::size_t max_episode_steps() const { return max_episode_steps_; }
  const std::vector<std::size_t>& terminals() const { return terminals_; }

  double probability(std::size_t s, ActionIndex a, std::size_t next) const {
    return kernel_[(s * action_count_ + a) * state_count_ + next];
  }
  double reward(std::size_t s, ActionIndex a) const { return rewards_[s * action_count_ + a]; }
  bool is_terminal(std::size_t s) const { return terminal_flags_[s]; }

  // Id plus one-hot features.
  State state(std::size_t s) const;

  // States reachable from the start state under some action sequence.
  std::vector<bool> reachable() const;

  const std::vector<double>& kernel() const { return kernel_; }
  const std::vector<double>& rewards() const { return rewards_; }

 private:
  std::string name_;
  std::size_t state_count_;
  std::size_t action_count_;
  std::vector<double> kernel_;
  std::vector<double> rewards_;
  std::vector<std::size_t> terminals_;
  std::vector<bool> terminal_flags_;
  double gamma_;
  std::size_t start_state_;
  std::size_t max_episode_steps_;
};

// s0 --a1--> terminal (r = 1); s0 --a0--> s0 (r = 0).
TabularMDP make_chain(double gamma = 0.5);

// rows x cols grid, actions up/down/left/right, start in the top-left corner,
// goal (+1, terminal) in the bottom-right corner and a pit (-1, terminal) at (1, 1)
// when the grid is at least 3x3. Moves into walls stay put.
TabularMDP make_gridworld(std::size_t rows = 4, std::size_t cols = 4, double gamma = 0.9);

// Q* by value iteration. On return the sup-norm Bellman residual is <= tolerance.
// Throws UsageError for gamma >= 1 without terminal states or when iteration
// does not converge within max_iterations.
TabularQ value_iteration(const TabularMDP& mdp, double tolerance = 1e-10,
                         std::size_t max_iterations = 1'000'000);

// Fixed point of Psi(s,a) = R(s,a)/c + log p(a|s) + gamma E[log sum exp Psi(s',.)].
// Throws UsageError if the prior has zero mass anywhere.
TabularQ soft_value_iteration(const TabularMDP& mdp, const PolicyPrior& prior, double reward_scale,
                              double tolerance = 1e-10, std::size_t max_iterations = 1'000'000);

// How a fixed policy's value is scored.
enum class EvaluationMode {
  plain,         // sum of discounted rewards
  kl_penalized,  // per-step r/c + log p(a|s) - log pi(a|s)
  soft,          // Psi form: r/c + log p(a|s), continuation E_pi[Psi - log pi]
};

// Exact Q^pi for a stochastic policy given as [S][A] probabilities (row per state).
// In kl_penalized mode the -log pi term uses `penalty_policy` when given
// (e.g. a softmax policy scored while a greedy one acts).
TabularQ policy_evaluation(const TabularMDP& mdp, const std::vector<ActionDistribution>& policy,
                           EvaluationMode mode = EvaluationMode::plain,
                           const PolicyPrior* prior = nullptr, double reward_scale = 1.0,
                           double tolerance = 1e-10, std::size_t max_iterations = 1'000'000,
                           const std::vector<ActionDistribution>* penalty_policy = nullptr);

// Max-abs Bellman residual of q under the hard or soft backup.
double bellman_residual(const TabularMDP& mdp, const TabularQ& q);
double soft_bellman_residual(const TabularMDP& mdp, const TabularQ& psi, const PolicyPrior& prior,
                             double reward_scale);

}  // namespace batchrl
