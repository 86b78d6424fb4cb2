#include "batchrl/tabular_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "batchrl/distribution.hpp"
#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

std::vector<std::vector<double>> prior_table(const TabularMDP& mdp, const PolicyPrior& prior) {
  if (prior.action_count() != mdp.action_count()) {
    throw UsageError("prior action count does not match the MDP");
  }
  std::vector<std::vector<double>> table(mdp.state_count());
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    const ActionDistribution p = prior.evaluate(mdp.state(s));
    table[s].assign(p.probs().begin(), p.probs().end());
  }
  return table;
}

void check_episodic(const TabularMDP& mdp) {
  if (mdp.gamma() >= 1.0 && mdp.terminals().empty()) {
    throw UsageError("undiscounted MDP without terminal states has no finite fixed point");
  }
}

// Repeats q <- backup(q) until successive iterates differ by <= tolerance.
// `values` maps the current table to per-state continuation values once per
// sweep; `backup` forms Q(s, a) from them. Terminal rows stay at zero.
template <typename Values, typename Backup>
TabularQ iterate_to_fixed_point(const TabularMDP& mdp, Values values, Backup backup,
                                double tolerance, std::size_t max_iterations, const char* what) {
  check_episodic(mdp);
  TabularQ q(mdp.state_count(), mdp.action_count());
  TabularQ next = q;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const std::vector<double> v = values(q);
    double change = 0.0;
    for (std::size_t s = 0; s < mdp.state_count(); ++s) {
      for (std::size_t a = 0; a < mdp.action_count(); ++a) {
        const double updated = mdp.is_terminal(s) ? 0.0 : backup(s, a, v);
        change = std::max(change, std::abs(updated - q.at(s, a)));
        next.at(s, a) = updated;
      }
    }
    std::swap(q, next);
    if (change <= tolerance) return q;
  }
  throw UsageError(std::string(what) + ": no convergence within the iteration budget");
}

double expected_next(const TabularMDP& mdp, std::size_t s, ActionIndex a,
                     const std::vector<double>& state_values) {
  double total = 0.0;
  for (std::size_t next = 0; next < mdp.state_count(); ++next) {
    const double p = mdp.probability(s, a, next);
    if (p == 0.0 || mdp.is_terminal(next)) continue;
    total += p * state_values[next];
  }
  return total;
}

std::vector<double> hard_values(const TabularMDP& mdp, const TabularQ& q) {
  std::vector<double> v(mdp.state_count(), 0.0);
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    const auto row = q.row(s);
    v[s] = *std::max_element(row.begin(), row.end());
  }
  return v;
}

std::vector<double> soft_values(const TabularMDP& mdp, const TabularQ& q) {
  std::vector<double> v(mdp.state_count(), 0.0);
  for (std::size_t s = 0; s < mdp.state_count(); ++s) v[s] = log_sum_exp(q.row(s));
  return v;
}

}  // namespace

TabularMDP::TabularMDP(std::string name, std::size_t state_count, std::size_t action_count,
                       std::vector<double> kernel, std::vector<double> rewards,
                       std::vector<std::size_t> terminals, double gamma, std::size_t start_state,
                       std::size_t max_episode_steps)
    : name_(std::move(name)),
      state_count_(state_count),
      action_count_(action_count),
      kernel_(std::move(kernel)),
      rewards_(std::move(rewards)),
      terminals_(std::move(terminals)),
      terminal_flags_(state_count, false),
      gamma_(gamma),
      start_state_(start_state),
      max_episode_steps_(max_episode_steps) {
  if (state_count_ == 0 || action_count_ == 0) throw UsageError("TabularMDP: empty state or action set");
  if (kernel_.size() != state_count_ * action_count_ * state_count_) {
    throw UsageError("TabularMDP: kernel must have S*A*S entries");
  }
  if (rewards_.size() != state_count_ * action_count_) {
    throw UsageError("TabularMDP: rewards must have S*A entries");
  }
  if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw UsageError("TabularMDP: gamma must lie in [0, 1]");
  if (start_state_ >= state_count_) throw UsageError("TabularMDP: start state out of range");
  for (std::size_t t : terminals_) {
    if (t >= state_count_) throw UsageError("TabularMDP: terminal state out of range");
    terminal_flags_[t] = true;
  }
  for (std::size_t s = 0; s < state_count_; ++s) {
    for (std::size_t a = 0; a < action_count_; ++a) {
      double sum = 0.0;
      for (std::size_t next = 0; next < state_count_; ++next) {
        const double p = probability(s, a, next);
        if (!(p >= 0.0)) throw UsageError("TabularMDP: negative transition probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw UsageError("TabularMDP: P[" + std::to_string(s) + "][" + std::to_string(a) +
                         "] sums to " + std::to_string(sum));
      }
      if (terminal_flags_[s] && (probability(s, a, s) != 1.0 || reward(s, a) != 0.0)) {
        throw UsageError("TabularMDP: terminal state " + std::to_string(s) +
                         " must self-absorb with zero reward");
      }
    }
  }
}

State TabularMDP::state(std::size_t s) const {
  if (s >= state_count_) throw UsageError("TabularMDP::state: index out of range");
  State state{static_cast<std::int64_t>(s), std::vector<double>(state_count_, 0.0)};
  state.features[s] = 1.0;
  return state;
}

std::vector<bool> TabularMDP::reachable() const {
  std::vector<bool> seen(state_count_, false);
  std::deque<std::size_t> frontier{start_state_};
  seen[start_state_] = true;
  while (!frontier.empty()) {
    const std::size_t s = frontier.front();
    frontier.pop_front();
    for (std::size_t a = 0; a < action_count_; ++a) {
      for (std::size_t next = 0; next < state_count_; ++next) {
        if (probability(s, a, next) > 0.0 && !seen[next]) {
          seen[next] = true;
          frontier.push_back(next);
        }
      }
    }
  }
  return seen;
}

TabularMDP make_chain(double gamma) {
  // state 0 = s0, state 1 = terminal; action 0 loops, action 1 exits with reward 1.
  std::vector<double> kernel{
      1.0, 0.0,  // s0, a0 -> s0
      0.0, 1.0,  // s0, a1 -> T
      0.0, 1.0,  // T absorbs
      0.0, 1.0,
  };
  std::vector<double> rewards{0.0, 1.0, 0.0, 0.0};
  return TabularMDP("chain", 2, 2, std::move(kernel), std::move(rewards), {1}, gamma, 0, 50);
}

TabularMDP make_gridworld(std::size_t rows, std::size_t cols, double gamma) {
  if (rows < 2 || cols < 2) throw UsageError("make_gridworld: grid must be at least 2x2");
  const std::size_t states = rows * cols;
  const std::size_t goal = states - 1;
  const bool has_pit = rows >= 3 && cols >= 3;
  const std::size_t pit = cols + 1;
  std::vector<double> kernel(states * 4 * states, 0.0);
  std::vector<double> rewards(states * 4, 0.0);
  std::vector<std::size_t> terminals{goal};
  if (has_pit) terminals.push_back(pit);
  auto terminal = [&](std::size_t s) { return s == goal || (has_pit && s == pit); };
  for (std::size_t s = 0; s < states; ++s) {
    const std::size_t r = s / cols;
    const std::size_t c = s % cols;
    for (std::size_t a = 0; a < 4; ++a) {
      std::size_t next = s;
      if (!terminal(s)) {
        if (a == 0 && r > 0) next = s - cols;         // up
        if (a == 1 && r + 1 < rows) next = s + cols;  // down
        if (a == 2 && c > 0) next = s - 1;            // left
        if (a == 3 && c + 1 < cols) next = s + 1;     // right
        if (next == goal) rewards[s * 4 + a] = 1.0;
        if (has_pit && next == pit) rewards[s * 4 + a] = -1.0;
      }
      kernel[(s * 4 + a) * states + next] = 1.0;
    }
  }
  return TabularMDP("gridworld" + std::to_string(rows) + "x" + std::to_string(cols), states, 4,
                    std::move(kernel), std::move(rewards), std::move(terminals), gamma, 0, 100);
}

TabularQ value_iteration(const TabularMDP& mdp, double tolerance, std::size_t max_iterations) {
  return iterate_to_fixed_point(
      mdp, [&](const TabularQ& q) { return hard_values(mdp, q); },
      [&](std::size_t s, ActionIndex a, const std::vector<double>& v) {
        return mdp.reward(s, a) + mdp.gamma() * expected_next(mdp, s, a, v);
      },
      tolerance, max_iterations, "value_iteration");
}

TabularQ soft_value_iteration(const TabularMDP& mdp, const PolicyPrior& prior, double reward_scale,
                              double tolerance, std::size_t max_iterations) {
  if (!(reward_scale > 0.0)) throw UsageError("soft_value_iteration: reward scale must be > 0");
  const auto p = prior_table(mdp, prior);
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    if (mdp.is_terminal(s)) continue;
    for (double prob : p[s]) {
      if (!(prob > 0.0)) throw UsageError("soft_value_iteration: prior has zero mass at a state");
    }
  }
  return iterate_to_fixed_point(
      mdp, [&](const TabularQ& q) { return soft_values(mdp, q); },
      [&](std::size_t s, ActionIndex a, const std::vector<double>& v) {
        return mdp.reward(s, a) / reward_scale + std::log(p[s][a]) +
               mdp.gamma() * expected_next(mdp, s, a, v);
      },
      tolerance, max_iterations, "soft_value_iteration");
}

TabularQ policy_evaluation(const TabularMDP& mdp, const std::vector<ActionDistribution>& policy,
                           EvaluationMode mode, const PolicyPrior* prior, double reward_scale,
                           double tolerance, std::size_t max_iterations,
                           const std::vector<ActionDistribution>* penalty_policy) {
  if (policy.size() != mdp.state_count()) {
    throw UsageError("policy_evaluation: need one action distribution per state");
  }
  for (const auto& row : policy) {
    if (row.size() != mdp.action_count()) throw UsageError("policy_evaluation: policy width mismatch");
  }
  std::vector<std::vector<double>> p;
  if (mode != EvaluationMode::plain) {
    if (prior == nullptr) throw UsageError("policy_evaluation: regularized modes need a prior");
    if (!(reward_scale > 0.0)) throw UsageError("policy_evaluation: reward scale must be > 0");
    p = prior_table(mdp, *prior);
  }
  if (penalty_policy != nullptr && penalty_policy->size() != mdp.state_count()) {
    throw UsageError("policy_evaluation: penalty policy needs one distribution per state");
  }
  auto log_pi = [&](std::size_t s, ActionIndex a) { return std::log(policy[s][a]); };
  auto log_penalty = [&](std::size_t s, ActionIndex a) {
    return penalty_policy != nullptr ? std::log((*penalty_policy)[s][a]) : log_pi(s, a);
  };
  auto continuation = [&](const TabularQ& q) {
    std::vector<double> v(mdp.state_count(), 0.0);
    for (std::size_t s = 0; s < mdp.state_count(); ++s) {
      double total = 0.0;
      for (std::size_t a = 0; a < mdp.action_count(); ++a) {
        if (policy[s][a] == 0.0) continue;
        double term = q.at(s, a);
        if (mode == EvaluationMode::soft) term -= log_pi(s, a);
        total += policy[s][a] * term;
      }
      v[s] = total;
    }
    return v;
  };
  return iterate_to_fixed_point(
      mdp, continuation,
      [&](std::size_t s, ActionIndex a, const std::vector<double>& v) {
        double immediate = mdp.reward(s, a);
        if (mode != EvaluationMode::plain) immediate = immediate / reward_scale + std::log(p[s][a]);
        if (mode == EvaluationMode::kl_penalized) immediate -= log_penalty(s, a);
        return immediate + mdp.gamma() * expected_next(mdp, s, a, v);
      },
      tolerance, max_iterations, "policy_evaluation");
}

double bellman_residual(const TabularMDP& mdp, const TabularQ& q) {
  const auto v = hard_values(mdp, q);
  double residual = 0.0;
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    if (mdp.is_terminal(s)) continue;
    for (std::size_t a = 0; a < mdp.action_count(); ++a) {
      const double backup = mdp.reward(s, a) + mdp.gamma() * expected_next(mdp, s, a, v);
      residual = std::max(residual, std::abs(backup - q.at(s, a)));
    }
  }
  return residual;
}

double soft_bellman_residual(const TabularMDP& mdp, const TabularQ& psi, const PolicyPrior& prior,
                             double reward_scale) {
  const auto p = prior_table(mdp, prior);
  const auto v = soft_values(mdp, psi);
  double residual = 0.0;
  for (std::size_t s = 0; s < mdp.state_count(); ++s) {
    if (mdp.is_terminal(s)) continue;
    for (std::size_t a = 0; a < mdp.action_count(); ++a) {
      const double backup = mdp.reward(s, a) / reward_scale + std::log(p[s][a]) +
                            mdp.gamma() * expected_next(mdp, s, a, v);
      residual = std::max(residual, std::abs(backup - psi.at(s, a)));
    }
  }
  return residual;
}

}  // namespace batchrl
