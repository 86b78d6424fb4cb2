#include "batchrl/algos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "batchrl/distribution.hpp"
#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_of(std::span<const double> values) { return values[argmax(values)]; }

double safe_log(double p) {
  return std::log(std::max(p, std::numeric_limits<double>::min()));
}

}  // namespace

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::batch_q: return "batch_q";
    case Variant::batch_q_mc: return "batch_q_mc";
    case Variant::dbcq: return "dbcq";
    case Variant::kl_q: return "kl_q";
    case Variant::kl_psi: return "kl_psi";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  for (Variant v : all_variants()) {
    if (to_string(v) == name) return v;
  }
  throw UsageError("unknown variant '" + std::string(name) + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> variants = {Variant::batch_q, Variant::batch_q_mc,
                                                Variant::dbcq, Variant::kl_q, Variant::kl_psi};
  return variants;
}

bool is_kl_control(Variant variant) { return variant == Variant::kl_q || variant == Variant::kl_psi; }

void AlgoConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("gamma must be in [0, 1]");
  if (!(reward_scale > 0.0)) throw UsageError("reward_scale c must be > 0");
  if (mc_passes < 1) throw UsageError("mc_passes must be >= 1");
  if (dbcq_candidates < 1) throw UsageError("dbcq_candidates must be >= 1");
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(polyak_rate > 0.0 && polyak_rate <= 1.0)) throw UsageError("polyak_rate must be in (0, 1]");
  if (!(clip_norm > 0.0)) throw UsageError("clip_norm must be > 0");
  if (reward.weights.empty()) throw UsageError("reward spec has no channels");
}

TrainState make_train_state(QFunction q, std::shared_ptr<const PolicyPrior> prior,
                            const AlgoConfig& config) {
  TargetCopy target = make_target(q, config.polyak_rate);
  return make_train_state(PriorInitializedQ{std::move(q), std::move(target)}, std::move(prior),
                          config);
}

TrainState make_train_state(PriorInitializedQ init, std::shared_ptr<const PolicyPrior> prior,
                            const AlgoConfig& config) {
  config.validate();
  if (!prior) throw UsageError("make_train_state: no prior");
  if (prior->action_count() != init.q.action_count()) {
    throw UsageError("make_train_state: prior and Q disagree on the action count");
  }
  init.target.polyak_rate = config.polyak_rate;
  return TrainState{std::move(init.q), std::move(init.target), std::move(prior), 0, {},
                    Rng(mix_seed(config.seed, 0x7a41)), Adam()};
}

double scaled_reward(const Transition& t, const AlgoConfig& config) {
  const double r = rewards::total_reward(t.rewards, config.reward);
  const bool scale = is_kl_control(config.variant) || config.scale_baseline_rewards;
  return scale ? r / config.reward_scale : r;
}

double target_batch_q(const Transition& t, double reward, const QFunction& target, double gamma) {
  if (t.terminal) return reward;
  return reward + gamma * max_of(target.values(t.next_state));
}

double target_batch_q_mc(const Transition& t, double reward, const QFunction& target,
                         double gamma, std::size_t passes, Rng& rng) {
  if (t.terminal) return reward;
  return reward + gamma * max_of(target.mc_lower_bound(t.next_state, passes, rng));
}

std::vector<ActionIndex> dbcq_candidates(const PolicyPrior& prior, const State& state,
                                         std::size_t count, CandidateMode mode, Rng& rng) {
  const ActionDistribution p = prior.evaluate(state);
  double mass = 0.0;
  for (double x : p.probs()) mass += x;
  if (!(mass > 0.0)) throw UsageError("dbcq: prior has no positive mass");
  std::vector<ActionIndex> candidates;
  if (mode == CandidateMode::sample) {
    for (std::size_t i = 0; i < count; ++i) candidates.push_back(sample_categorical(p.probs(), rng));
  } else {
    std::vector<ActionIndex> order(p.size());
    for (std::size_t a = 0; a < order.size(); ++a) order[a] = a;
    std::stable_sort(order.begin(), order.end(),
                     [&](ActionIndex x, ActionIndex y) { return p[x] > p[y]; });
    for (std::size_t i = 0; i < order.size() && candidates.size() < count; ++i) {
      if (p[order[i]] > 0.0) candidates.push_back(order[i]);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  return candidates;
}

double target_dbcq(const Transition& t, double reward, const QFunction& target,
                   const PolicyPrior& prior, const AlgoConfig& config, Rng& rng) {
  if (t.terminal) return reward;
  const auto candidates =
      dbcq_candidates(prior, t.next_state, config.dbcq_candidates, config.dbcq_mode, rng);
  const auto values = target.mc_lower_bound(t.next_state, config.mc_passes, rng);
  double best = kNegInf;
  for (ActionIndex a : candidates) best = std::max(best, values[a]);
  return reward + config.gamma * best;
}

double target_kl_q(const Transition& t, double scaled_reward, const QFunction& target,
                   const PolicyPrior& prior, const ActionDistribution& pi_current, double gamma,
                   std::size_t passes, KlBootstrap bootstrap, Rng& rng) {
  const double p = prior.evaluate(t.state)[t.action];
  if (!(p > 0.0)) return kNegInf;
  const double rho = scaled_reward + std::log(p) - safe_log(pi_current[t.action]);
  if (t.terminal) return rho;
  const auto next = bootstrap == KlBootstrap::hard_max ? target.values(t.next_state)
                                                       : target.mc_lower_bound(t.next_state, passes, rng);
  return rho + gamma * max_of(next);
}

double target_kl_psi(const Transition& t, double scaled_reward, const QFunction& target,
                     const PolicyPrior& prior, double gamma, std::size_t passes, Rng& rng) {
  const double p = prior.evaluate(t.state)[t.action];
  if (!(p > 0.0)) return kNegInf;
  const double base = scaled_reward + std::log(p);
  if (t.terminal) return base;
  return base + gamma * log_sum_exp(target.mc_lower_bound(t.next_state, passes, rng));
}

double compute_target(const Transition& t, const QFunction& online, const QFunction& target,
                      const PolicyPrior& prior, const AlgoConfig& config, Rng& rng) {
  const double r = scaled_reward(t, config);
  switch (config.variant) {
    case Variant::batch_q: return target_batch_q(t, r, target, config.gamma);
    case Variant::batch_q_mc:
      return target_batch_q_mc(t, r, target, config.gamma, config.mc_passes, rng);
    case Variant::dbcq: return target_dbcq(t, r, target, prior, config, rng);
    case Variant::kl_q:
      return target_kl_q(t, r, target, prior, policy_distribution(online, t.state), config.gamma,
                         config.mc_passes, config.kl_q_bootstrap, rng);
    case Variant::kl_psi:
      return target_kl_psi(t, r, target, prior, config.gamma, config.mc_passes, rng);
  }
  throw UsageError("compute_target: unknown variant");
}

ActionDistribution policy_distribution(const QFunction& q, const State& state) {
  return softmax(q.values(state));
}

ActionIndex act(const AlgoConfig& config, const QFunction& q, const PolicyPrior& prior,
                const State& state, ActMode mode, Rng& rng) {
  const auto values = q.values(state);
  if (config.variant == Variant::dbcq) {
    const auto candidates =
        dbcq_candidates(prior, state, config.dbcq_candidates, config.dbcq_mode, rng);
    ActionIndex best = candidates.front();
    for (ActionIndex a : candidates) {
      if (values[a] > values[best]) best = a;
    }
    return best;
  }
  if (mode == ActMode::greedy) return argmax(values);
  const ActionDistribution pi = softmax(values);
  return sample_categorical(pi.probs(), rng);
}

StepMetrics train_step(TrainState& state, std::span<const Transition> minibatch,
                       const AlgoConfig& config) {
  if (minibatch.empty()) throw UsageError("train_step: empty minibatch");
  const PolicyPrior& prior = *state.prior;

  std::vector<double> targets(minibatch.size());
  std::vector<bool> used(minibatch.size(), false);
  StepMetrics metrics;
  metrics.step = state.step_count;
  std::size_t n_used = 0;
  double target_sum = 0.0;
  for (std::size_t i = 0; i < minibatch.size(); ++i) {
    const double y = compute_target(minibatch[i], state.q, state.target.net, prior, config, state.rng);
    if (y == kNegInf) {
      ++metrics.skipped;
      continue;
    }
    targets[i] = y;
    used[i] = true;
    ++n_used;
    target_sum += y;
  }

  const bool stochastic_online = !state.q.is_tabular() && state.q.dropout_rate() > 0.0;
  std::vector<double> gradient(state.q.parameter_count(), 0.0);
  double loss_sum = 0.0;
  std::map<std::pair<std::size_t, ActionIndex>, std::pair<double, std::size_t>> groups;
  for (std::size_t i = 0; i < minibatch.size(); ++i) {
    if (!used[i]) continue;
    const Transition& t = minibatch[i];
    std::optional<DropoutMask> mask;
    if (stochastic_online) mask = state.q.sample_mask(state.rng());
    const double prediction = state.q.values(t.state, mask ? &*mask : nullptr).at(t.action);
    const SmoothL1 l = smooth_l1(prediction, targets[i]);
    loss_sum += l.loss;
    if (config.tabular_assign) {
      if (!state.q.is_tabular()) throw UsageError("tabular_assign requires a tabular Q");
      auto& g = groups[{state.q.tabular()->index_of(t.state), t.action}];
      g.first += targets[i];
      g.second += 1;
    } else {
      state.q.accumulate_gradient(t.state, mask ? &*mask : nullptr, t.action,
                                  l.grad / static_cast<double>(n_used), gradient);
    }
  }

  if (n_used > 0) {
    metrics.loss = loss_sum / static_cast<double>(n_used);
    metrics.mean_target = target_sum / static_cast<double>(n_used);
    if (!std::isfinite(metrics.loss)) {
      throw TrainingError("train_step: non-finite loss at step " + std::to_string(state.step_count));
    }
    if (config.tabular_assign) {
      TabularQ& table = *state.q.tabular();
      for (const auto& [key, g] : groups) {
        table.at(key.first, key.second) = g.first / static_cast<double>(g.second);
      }
    } else if (config.optimizer == OptimizerKind::adam) {
      state.adam.step(state.q.parameters(), gradient, config.learning_rate, config.clip_norm,
                      config.clip_mode);
    } else {
      clip_and_step(state.q.parameters(), gradient, config.learning_rate, config.clip_norm,
                    config.clip_mode);
    }
  }
  polyak_update(state.target, state.q, config.polyak_rate);

  double kl_sum = 0.0;
  for (const Transition& t : minibatch) {
    kl_sum += kl_divergence(policy_distribution(state.q, t.state), prior.evaluate(t.state));
  }
  metrics.mean_kl = kl_sum / static_cast<double>(minibatch.size());

  ++state.step_count;
  state.metrics.push_back(metrics);
  return metrics;
}

void train(TrainState& state, const Batch& batch, const TrainingOptions& options,
           const AlgoConfig& config, const StepCallback& on_step) {
  const auto& transitions = batch.transitions();
  if (transitions.empty()) throw UsageError("train: empty batch");
  Rng sampler(mix_seed(options.sampler_seed, 0x5a3b));
  std::vector<Transition> minibatch;
  for (std::size_t step = 0; step < options.steps; ++step) {
    StepMetrics metrics;
    if (options.minibatch_size == 0) {
      metrics = train_step(state, transitions, config);
    } else {
      minibatch.clear();
      for (std::size_t i = 0; i < options.minibatch_size; ++i) {
        minibatch.push_back(transitions[uniform_index(sampler, transitions.size())]);
      }
      metrics = train_step(state, minibatch, config);
    }
    if (on_step) on_step(state, metrics);
  }
}

double utterance_boundary_target(const DialogEnv& env, const DialogEnvState& state,
                                 ActionIndex token,
                                 const std::optional<rewards::Tokens>& user_response,
                                 bool conversation_over, const RewardMap& rewards,
                                 const QFunction& online, const QFunction& target,
                                 const PolicyPrior& prior, const AlgoConfig& config, Rng& rng) {
  DialogEnvState spoken = state;
  if (token != 0) spoken.current.push_back(env.token(token));
  const bool ends_utterance =
      token == 0 || spoken.current.size() >= env.config().max_utterance_tokens;

  Transition t;
  t.state = env.observe(state);
  t.action = token;
  t.rewards = rewards;
  if (!ends_utterance) {
    t.next_state = env.observe(spoken);
    t.terminal = false;
  } else {
    if (!conversation_over && !user_response) {
      throw ContractError("utterance_boundary_target: non-final turn without a user response");
    }
    DialogEnvState next =
        env.append_exchange(spoken, spoken.current, user_response.value_or(rewards::Tokens{}));
    next.turn = state.turn + 1;
    next.finished = conversation_over;
    t.next_state = env.observe(next);
    t.terminal = conversation_over;
  }
  return compute_target(t, online, target, prior, config, rng);
}

}  // namespace batchrl
