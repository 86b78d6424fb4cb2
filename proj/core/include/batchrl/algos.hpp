#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "batchrl/dialog.hpp"
#include "batchrl/optim.hpp"
#include "batchrl/prior.hpp"
#include "batchrl/q_function.hpp"
#include "batchrl/random.hpp"
#include "batchrl/rewards.hpp"
#include "batchrl/types.hpp"

namespace batchrl {

enum class Variant { batch_q, batch_q_mc, dbcq, kl_q, kl_psi };

std::string_view to_string(Variant variant);
Variant variant_from_string(std::string_view name);
const std::vector<Variant>& all_variants();
bool is_kl_control(Variant variant);

// Bootstrap used by kl_q: max over per-action MC minima, or a plain
// deterministic max.
enum class KlBootstrap { mc_min_max, hard_max };

// How dbcq picks candidate actions from the prior.
enum class CandidateMode { sample, top_k };

enum class ActMode { greedy, sample };

struct AlgoConfig {
  Variant variant = Variant::batch_q;
  double gamma = 0.5;
  double reward_scale = 2.0;  // c
  std::size_t mc_passes = 5;  // M
  std::size_t dbcq_candidates = 10;
  CandidateMode dbcq_mode = CandidateMode::sample;
  bool use_model_averaged_prior = false;
  // Divide baseline rewards by c as well (ablation).
  bool scale_baseline_rewards = false;
  KlBootstrap kl_q_bootstrap = KlBootstrap::mc_min_max;
  double learning_rate = 1e-4;
  double polyak_rate = 0.005;
  double clip_norm = 1.0;
  ClipMode clip_mode = ClipMode::global_norm;
  OptimizerKind optimizer = OptimizerKind::adam;
  // Tabular only: each step sets Q(s,a) to the mean target of the (s,a)
  // group in the minibatch instead of taking a gradient step.
  bool tabular_assign = false;
  // Maps a transition's reward channels to the scalar r.
  rewards::RewardSpec reward = rewards::RewardSpec::single("reward");
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_kl = 0.0;      // mean over minibatch states of KL(pi || prior)
  double mean_target = 0.0;
  std::size_t skipped = 0;   // transitions dropped for zero prior mass
};

struct TrainState {
  QFunction q;
  TargetCopy target;
  std::shared_ptr<const PolicyPrior> prior;
  std::size_t step_count = 0;
  std::vector<StepMetrics> metrics;
  Rng rng;
  Adam adam;
};

TrainState make_train_state(QFunction q, std::shared_ptr<const PolicyPrior> prior,
                            const AlgoConfig& config);
// Starts from an existing target copy (e.g. the one returned by init_q_from_prior).
TrainState make_train_state(PriorInitializedQ init, std::shared_ptr<const PolicyPrior> prior,
                            const AlgoConfig& config);

// Scalar reward for a transition under the config's spec; divided by c for
// kl variants (and for baselines when scale_baseline_rewards is set).
double scaled_reward(const Transition& t, const AlgoConfig& config);

// r + gamma * max_a' Q_T(s', a') with a deterministic pass; r at terminals.
double target_batch_q(const Transition& t, double reward, const QFunction& target, double gamma);

// r + gamma * max_a' min_i Q_T(s', a'; d_i) over `passes` dropout passes.
double target_batch_q_mc(const Transition& t, double reward, const QFunction& target,
                         double gamma, std::size_t passes, Rng& rng);

// Bootstrap over prior-sampled candidates at s' using MC-min values.
double target_dbcq(const Transition& t, double reward, const QFunction& target,
                   const PolicyPrior& prior, const AlgoConfig& config, Rng& rng);

// rho = r_scaled + log p(a|s) - log pi(a|s); plus gamma * bootstrap unless terminal.
// Returns -infinity when p(a|s) = 0 (the transition must be skipped).
double target_kl_q(const Transition& t, double scaled_reward, const QFunction& target,
                   const PolicyPrior& prior, const ActionDistribution& pi_current, double gamma,
                   std::size_t passes, KlBootstrap bootstrap, Rng& rng);

// r_scaled + log p(a|s) + gamma * logsumexp of per-action MC minima at s'.
// Returns -infinity when p(a|s) = 0.
double target_kl_psi(const Transition& t, double scaled_reward, const QFunction& target,
                     const PolicyPrior& prior, double gamma, std::size_t passes, Rng& rng);

// Dispatches on config.variant. `online` supplies pi for kl_q.
double compute_target(const Transition& t, const QFunction& online, const QFunction& target,
                      const PolicyPrior& prior, const AlgoConfig& config, Rng& rng);

// Candidate actions for dbcq at `state`, deduplicated and in ascending order.
// Throws UsageError when the prior has no positive mass.
std::vector<ActionIndex> dbcq_candidates(const PolicyPrior& prior, const State& state,
                                         std::size_t count, CandidateMode mode, Rng& rng);

// softmax of the deterministic action values.
ActionDistribution policy_distribution(const QFunction& q, const State& state);

ActionIndex act(const AlgoConfig& config, const QFunction& q, const PolicyPrior& prior,
                const State& state, ActMode mode, Rng& rng);

// One update on a minibatch. Throws TrainingError (parameters unchanged) on a
// non-finite loss or gradient.
StepMetrics train_step(TrainState& state, std::span<const Transition> minibatch,
                       const AlgoConfig& config);

struct TrainingOptions {
  std::size_t steps = 1000;
  // 0 means the whole batch every step.
  std::size_t minibatch_size = 32;
  std::uint64_t sampler_seed = 0;
};

using StepCallback = std::function<void(const TrainState&, const StepMetrics&)>;

// Runs `options.steps` train_step calls on minibatches drawn uniformly with
// replacement from the batch.
void train(TrainState& state, const Batch& batch, const TrainingOptions& options,
           const AlgoConfig& config, const StepCallback& on_step = {});

// Target for the final token of an agent utterance: the next state is the
// conversation with the agent utterance and `user_response` appended. For a
// token that does not end the utterance the target is the plain
// within-utterance bootstrap and the response is ignored. Throws
// ContractError when a non-final turn has no user response.
double utterance_boundary_target(const DialogEnv& env, const DialogEnvState& state,
                                 ActionIndex token,
                                 const std::optional<rewards::Tokens>& user_response,
                                 bool conversation_over, const RewardMap& rewards,
                                 const QFunction& online, const QFunction& target,
                                 const PolicyPrior& prior, const AlgoConfig& config, Rng& rng);

}  // namespace batchrl
