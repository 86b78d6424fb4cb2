#include "batchrl/prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "batchrl/checkpoint.hpp"
#include "batchrl/distribution.hpp"
#include "batchrl/errors.hpp"
#include "batchrl/optim.hpp"

namespace batchrl {

namespace {

void check_model_id(const std::string& id) {
  if (id.empty()) throw UsageError("prior model id must not be empty");
  if (std::any_of(id.begin(), id.end(), [](unsigned char c) { return std::isspace(c); })) {
    throw UsageError("prior model id must not contain whitespace: '" + id + "'");
  }
}

}  // namespace

PriorModel PriorModel::from_counts(std::string model_id, std::size_t state_count,
                                   std::size_t action_count, std::vector<double> counts,
                                   double smoothing) {
  check_model_id(model_id);
  if (state_count == 0 || action_count == 0) throw UsageError("counts prior: empty shape");
  if (counts.size() != state_count * action_count) throw UsageError("counts prior: shape mismatch");
  if (!(smoothing >= 0.0)) throw UsageError("counts prior: smoothing must be >= 0");
  for (double c : counts) {
    if (!(c >= 0.0)) throw UsageError("counts prior: negative count");
  }
  PriorModel prior;
  prior.kind_ = Kind::tabular_counts;
  prior.model_id_ = std::move(model_id);
  prior.smoothing_ = smoothing;
  prior.state_count_ = state_count;
  prior.action_count_ = action_count;
  prior.counts_ = std::move(counts);
  return prior;
}

PriorModel PriorModel::from_network(std::string model_id, FeedforwardQ logits) {
  check_model_id(model_id);
  PriorModel prior;
  prior.kind_ = Kind::feedforward;
  prior.model_id_ = std::move(model_id);
  prior.action_count_ = logits.output_width();
  prior.network_ = std::move(logits);
  return prior;
}

PriorEvaluation PriorModel::evaluate_flagged(const State& state) const {
  if (kind_ == Kind::feedforward) {
    return {softmax(network_->forward(state.features)), false};
  }
  if (state.id < 0 || static_cast<std::size_t>(state.id) >= state_count_) {
    throw UsageError("counts prior: state id " + std::to_string(state.id) + " out of range");
  }
  const auto row = std::span<const double>(counts_).subspan(
      static_cast<std::size_t>(state.id) * action_count_, action_count_);
  const double visits = std::accumulate(row.begin(), row.end(), 0.0);
  const double denominator = visits + smoothing_ * static_cast<double>(action_count_);
  if (denominator <= 0.0) return {ActionDistribution::uniform(action_count_), true};
  std::vector<double> probs(action_count_);
  for (std::size_t a = 0; a < action_count_; ++a) probs[a] = (row[a] + smoothing_) / denominator;
  return {ActionDistribution(std::move(probs)), visits == 0.0};
}

ActionDistribution PriorModel::evaluate(const State& state) const {
  return evaluate_flagged(state).distribution;
}

PriorModel fit_mle_counts(std::span<const Trajectory> demonstrations, std::size_t state_count,
                          std::size_t action_count, double smoothing, std::string model_id) {
  if (demonstrations.empty()) throw UsageError("fit_mle_counts: no demonstrations");
  std::vector<double> counts(state_count * action_count, 0.0);
  for (const auto& trajectory : demonstrations) {
    for (const auto& step : trajectory.steps()) {
      if (step.state.id < 0 || static_cast<std::size_t>(step.state.id) >= state_count) {
        throw UsageError("fit_mle_counts: state id out of range");
      }
      if (step.action >= action_count) throw UsageError("fit_mle_counts: action out of range");
      counts[static_cast<std::size_t>(step.state.id) * action_count + step.action] += 1.0;
    }
  }
  return PriorModel::from_counts(std::move(model_id), state_count, action_count,
                                 std::move(counts), smoothing);
}

PriorModel fit_mle_network(std::span<const Trajectory> demonstrations, std::size_t action_count,
                           const NetworkPriorOptions& options, std::string model_id,
                           NetworkFitReport* report) {
  std::vector<const TrajectoryStep*> examples;
  for (const auto& trajectory : demonstrations) {
    for (const auto& step : trajectory.steps()) examples.push_back(&step);
  }
  if (examples.empty()) throw UsageError("fit_mle_network: no demonstrations");
  const std::size_t input_width = examples.front()->state.features.size();
  if (input_width == 0) throw UsageError("fit_mle_network: states carry no features");

  std::vector<std::size_t> widths{input_width};
  widths.insert(widths.end(), options.hidden.begin(), options.hidden.end());
  widths.push_back(action_count);
  FeedforwardQ net = FeedforwardQ::uniform_init(mlp_shapes(widths, options.hidden_activation),
                                                options.dropout_rate, options.seed);

  Rng rng(mix_seed(options.seed, 1));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> gradient(net.parameter_count());
  std::vector<double> velocity(net.parameter_count(), 0.0);
  const std::size_t minibatch = std::max<std::size_t>(1, options.minibatch_size);

  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;
  for (std::size_t epoch = 0; epoch < options.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += minibatch) {
      const std::size_t end = std::min(order.size(), start + minibatch);
      std::fill(gradient.begin(), gradient.end(), 0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const TrajectoryStep& example = *examples[order[k]];
        if (example.action >= action_count) throw UsageError("fit_mle_network: action out of range");
        std::optional<DropoutMask> mask;
        if (net.dropout_rate() > 0.0) mask = net.sample_mask(rng());
        const auto logits = net.forward(example.state.features, mask ? &*mask : nullptr);
        const ActionDistribution probs = softmax(logits);
        epoch_loss -= std::log(std::max(probs[example.action], 1e-300));
        std::vector<double> output_grad(probs.probs().begin(), probs.probs().end());
        output_grad[example.action] -= 1.0;
        if (options.self_normalization > 0.0) {
          const double lse = log_sum_exp(logits);
          for (std::size_t a = 0; a < output_grad.size(); ++a) {
            output_grad[a] += 2.0 * options.self_normalization * lse * probs[a];
          }
        }
        for (double& g : output_grad) g *= scale;
        net.backward(example.state.features, mask ? &*mask : nullptr, output_grad, gradient);
      }
      // Clip, then momentum SGD.
      double squared = 0.0;
      for (double g : gradient) squared += g * g;
      const double norm = std::sqrt(squared);
      const double clip_scale = norm > options.clip_norm ? options.clip_norm / norm : 1.0;
      auto params = net.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        velocity[p] = options.momentum * velocity[p] - options.learning_rate * clip_scale * gradient[p];
        params[p] += velocity[p];
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw TrainingError("fit_mle_network: loss diverged");
    if (report != nullptr) report->epoch_losses.push_back(epoch_loss);
    if (best_loss - epoch_loss < options.plateau_tolerance) {
      if (++stale_epochs >= options.patience) break;
    } else {
      stale_epochs = 0;
    }
    best_loss = std::min(best_loss, epoch_loss);
  }
  return PriorModel::from_network(std::move(model_id), std::move(net));
}

AveragedPrior::AveragedPrior(std::vector<std::shared_ptr<const PriorModel>> members,
                             std::vector<double> scores)
    : members_(std::move(members)), scores_(std::move(scores)) {
  if (members_.empty()) throw UsageError("average: need at least one member");
  if (members_.size() != scores_.size()) throw UsageError("average: one score per member");
  double total = 0.0;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (!members_[i]) throw UsageError("average: null member");
    if (members_[i]->action_count() != members_.front()->action_count()) {
      throw UsageError("average: members disagree on action count");
    }
    if (!(scores_[i] >= 0.0)) throw UsageError("average: scores must be non-negative");
    total += scores_[i];
  }
  if (!(total > 0.0)) throw UsageError("average: scores are all zero");
  for (double& s : scores_) s /= total;
}

ActionDistribution AveragedPrior::evaluate(const State& state) const {
  std::vector<double> mixed(action_count(), 0.0);
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (scores_[i] == 0.0) continue;
    const ActionDistribution member = members_[i]->evaluate(state);
    for (std::size_t a = 0; a < mixed.size(); ++a) mixed[a] += scores_[i] * member[a];
  }
  // Renormalize away accumulated rounding.
  const double total = std::accumulate(mixed.begin(), mixed.end(), 0.0);
  for (double& p : mixed) p /= total;
  return ActionDistribution(std::move(mixed));
}

AveragedPrior average(std::vector<std::shared_ptr<const PriorModel>> members,
                      std::vector<double> scores) {
  return AveragedPrior(std::move(members), std::move(scores));
}

std::vector<double> scores_from_metadata(const std::map<std::string, double>& metadata,
                                         std::span<const std::shared_ptr<const PriorModel>> members) {
  std::vector<double> scores;
  for (const auto& member : members) {
    auto it = metadata.find(member->model_id());
    scores.push_back(it == metadata.end() ? 0.0 : it->second);
  }
  return scores;
}

PriorInitializedQ init_q_from_prior(const PriorModel& prior, double polyak_rate,
                                    TabularInit tabular_init,
                                    const std::vector<LayerShape>* expected_layers) {
  if (prior.kind() == PriorModel::Kind::feedforward) {
    if (expected_layers != nullptr && *expected_layers != prior.network()->layers()) {
      throw UsageError("init_q_from_prior: Q-network architecture differs from the prior's");
    }
    QFunction q(*prior.network());
    TargetCopy target = make_target(q, polyak_rate);
    return {std::move(q), std::move(target)};
  }
  TabularQ table(prior.state_count(), prior.action_count());
  if (tabular_init == TabularInit::log_prior) {
    for (std::size_t s = 0; s < prior.state_count(); ++s) {
      const ActionDistribution p = prior.evaluate(State{static_cast<std::int64_t>(s), {}});
      for (std::size_t a = 0; a < prior.action_count(); ++a) {
        if (p[a] <= 0.0) {
          throw UsageError(
              "init_q_from_prior: log-prior init needs a strictly positive prior; "
              "use smoothing > 0 or TabularInit::zero");
        }
        table.at(s, a) = std::log(p[a]);
      }
    }
  }
  QFunction q(std::move(table));
  TargetCopy target = make_target(q, polyak_rate);
  return {std::move(q), std::move(target)};
}

void write_prior(std::ostream& out, const PriorModel& prior) {
  out << "batchrl-prior 1\n";
  out << "prior_kind "
      << (prior.kind() == PriorModel::Kind::feedforward ? "feedforward" : "tabular_counts") << '\n';
  out << "smoothing " << format_hex(prior.smoothing()) << '\n';
  out << "model_id " << prior.model_id() << '\n';
  if (prior.kind() == PriorModel::Kind::feedforward) {
    write_checkpoint(out, QFunction(*prior.network()), 0);
    return;
  }
  out << "shape " << prior.state_count() << ' ' << prior.action_count() << '\n';
  write_hex_values(out, prior.counts());
}

PriorModel read_prior(std::istream& in) {
  std::string key, value;
  auto expect = [&](const std::string& want) {
    if (!(in >> key >> value) || key != want) {
      throw FormatError("prior checkpoint: expected '" + want + "'");
    }
    return value;
  };
  if (expect("batchrl-prior") != "1") throw FormatError("prior checkpoint: unsupported version");
  const std::string kind = expect("prior_kind");
  const double smoothing = parse_hex(expect("smoothing"));
  const std::string model_id = expect("model_id");
  if (kind == "feedforward") {
    Checkpoint checkpoint = read_checkpoint(in);
    if (checkpoint.q.network() == nullptr) throw FormatError("prior checkpoint: expected a network");
    return PriorModel::from_network(model_id, *checkpoint.q.network());
  }
  if (kind != "tabular_counts") throw FormatError("prior checkpoint: unknown kind '" + kind + "'");
  std::size_t states = 0, actions = 0;
  if (!(in >> key >> states >> actions) || key != "shape") {
    throw FormatError("prior checkpoint: expected 'shape'");
  }
  auto counts = read_hex_values(in, states * actions);
  return PriorModel::from_counts(model_id, states, actions, std::move(counts), smoothing);
}

void save_prior(const std::filesystem::path& path, const PriorModel& prior) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot open prior checkpoint for writing: " + path.string());
  write_prior(out, prior);
}

PriorModel load_prior(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open prior checkpoint: " + path.string());
  return read_prior(in);
}

}  // namespace batchrl
