#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "batchrl/network.hpp"
#include "batchrl/q_function.hpp"
#include "batchrl/types.hpp"

namespace batchrl {

// Anything that yields p(a|s).
class PolicyPrior {
 public:
  virtual ~PolicyPrior() = default;
  virtual std::size_t action_count() const = 0;
  virtual ActionDistribution evaluate(const State& state) const = 0;
};

struct PriorEvaluation {
  ActionDistribution distribution;
  // True when a counts prior has never seen the state and fell back to uniform.
  bool unseen = false;
};

// A prior fit by maximum likelihood: either smoothed visit counts or a
// network whose outputs are logits (softmax is applied in evaluate()).
class PriorModel final : public PolicyPrior {
 public:
  enum class Kind { tabular_counts, feedforward };

  static PriorModel from_counts(std::string model_id, std::size_t state_count,
                                std::size_t action_count, std::vector<double> counts,
                                double smoothing);
  static PriorModel from_network(std::string model_id, FeedforwardQ logits);

  Kind kind() const { return kind_; }
  const std::string& model_id() const { return model_id_; }
  double smoothing() const { return smoothing_; }
  std::size_t action_count() const override { return action_count_; }
  std::size_t state_count() const { return state_count_; }

  ActionDistribution evaluate(const State& state) const override;
  PriorEvaluation evaluate_flagged(const State& state) const;

  // Raw counts [state_count x action_count]; empty for network priors.
  std::span<const double> counts() const { return counts_; }
  const FeedforwardQ* network() const { return network_ ? &*network_ : nullptr; }

 private:
  PriorModel() = default;

  Kind kind_ = Kind::tabular_counts;
  std::string model_id_;
  double smoothing_ = 0.0;
  std::size_t state_count_ = 0;
  std::size_t action_count_ = 0;
  std::vector<double> counts_;
  std::optional<FeedforwardQ> network_;
};

// p(a|s) = (count(s,a) + smoothing) / (count(s) + smoothing * A).
PriorModel fit_mle_counts(std::span<const Trajectory> demonstrations, std::size_t state_count,
                          std::size_t action_count, double smoothing = 0.1,
                          std::string model_id = "prior");

struct NetworkPriorOptions {
  std::vector<std::size_t> hidden{32};
  Activation hidden_activation = Activation::relu;
  double dropout_rate = 0.0;
  std::size_t max_epochs = 40;
  std::size_t minibatch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;
  // Weight of a (logsumexp of logits)^2 penalty. Pushes raw logits toward
  // log-probabilities, which matters when Q is initialized from the prior.
  double self_normalization = 0.0;
  // Stop once the epoch loss improves by less than this for `patience` epochs.
  double plateau_tolerance = 1e-4;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
};

struct NetworkFitReport {
  std::vector<double> epoch_losses;  // mean cross-entropy per epoch
};

// Cross-entropy training of a logits network on every (state features, action)
// pair in the demonstrations.
PriorModel fit_mle_network(std::span<const Trajectory> demonstrations, std::size_t action_count,
                           const NetworkPriorOptions& options, std::string model_id = "prior",
                           NetworkFitReport* report = nullptr);

// Convex combination sum_M S(M) p(a|s; M) with scores normalized to sum to one.
class AveragedPrior final : public PolicyPrior {
 public:
  AveragedPrior(std::vector<std::shared_ptr<const PriorModel>> members, std::vector<double> scores);

  std::size_t action_count() const override { return members_.front()->action_count(); }
  ActionDistribution evaluate(const State& state) const override;

  const std::vector<std::shared_ptr<const PriorModel>>& members() const { return members_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  std::vector<std::shared_ptr<const PriorModel>> members_;
  std::vector<double> scores_;
};

AveragedPrior average(std::vector<std::shared_ptr<const PriorModel>> members,
                      std::vector<double> scores);

// Scores from batch provenance: the fraction of the batch each member generated.
std::vector<double> scores_from_metadata(const std::map<std::string, double>& metadata,
                                         std::span<const std::shared_ptr<const PriorModel>> members);

enum class TabularInit { log_prior, zero };

struct PriorInitializedQ {
  QFunction q;
  TargetCopy target;
};

// Network priors: Q copies the prior's parameters (and its architecture must
// equal `expected_layers` when given). Counts priors: Q(s,a) = log p(a|s), or
// zero with TabularInit::zero. The target copy starts identical to Q.
PriorInitializedQ init_q_from_prior(const PriorModel& prior, double polyak_rate,
                                    TabularInit tabular_init = TabularInit::log_prior,
                                    const std::vector<LayerShape>* expected_layers = nullptr);

// Prior checkpoint: a header with kind, smoothing and model id followed by the
// approximator checkpoint (network) or the raw count table.
void write_prior(std::ostream& out, const PriorModel& prior);
PriorModel read_prior(std::istream& in);
void save_prior(const std::filesystem::path& path, const PriorModel& prior);
PriorModel load_prior(const std::filesystem::path& path);

}  // namespace batchrl
