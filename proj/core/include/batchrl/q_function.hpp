#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "batchrl/network.hpp"
#include "batchrl/random.hpp"
#include "batchrl/types.hpp"

namespace batchrl {

// Dense [state_count x action_count] table addressed by State::id.
class TabularQ {
 public:
  TabularQ(std::size_t state_count, std::size_t action_count, double initial_value = 0.0);

  std::size_t state_count() const { return state_count_; }
  std::size_t action_count() const { return action_count_; }

  double at(std::size_t state, ActionIndex action) const;
  double& at(std::size_t state, ActionIndex action);
  std::span<const double> row(std::size_t state) const;

  // Row index for a State; throws UsageError when the id is out of range.
  std::size_t index_of(const State& state) const;

  std::span<double> parameters() { return table_; }
  std::span<const double> parameters() const { return table_; }

  friend bool operator==(const TabularQ&, const TabularQ&) = default;

 private:
  std::size_t state_count_;
  std::size_t action_count_;
  std::vector<double> table_;
};

// Value approximator used by every algorithm: a table or a dropout network
// behind one surface. On the tabular path masks are empty and every
// stochastic pass equals the deterministic value.
class QFunction {
 public:
  explicit QFunction(TabularQ table) : impl_(std::move(table)) {}
  explicit QFunction(FeedforwardQ net) : impl_(std::move(net)) {}

  bool is_tabular() const { return std::holds_alternative<TabularQ>(impl_); }
  const TabularQ* tabular() const { return std::get_if<TabularQ>(&impl_); }
  TabularQ* tabular() { return std::get_if<TabularQ>(&impl_); }
  const FeedforwardQ* network() const { return std::get_if<FeedforwardQ>(&impl_); }
  FeedforwardQ* network() { return std::get_if<FeedforwardQ>(&impl_); }

  std::size_t action_count() const;
  double dropout_rate() const;

  std::span<double> parameters();
  std::span<const double> parameters() const;
  std::size_t parameter_count() const { return parameters().size(); }

  // Deterministic (dropout-free) action values.
  std::vector<double> values(const State& state) const;
  std::vector<double> values(const State& state, const DropoutMask* mask) const;

  DropoutMask sample_mask(std::uint64_t seed) const;

  // Per-action minimum over `passes` stochastic passes.
  std::vector<double> mc_lower_bound(const State& state, std::size_t passes, Rng& rng) const;

  // Adds value_grad * d values[action] / d params to `gradient`.
  void accumulate_gradient(const State& state, const DropoutMask* mask, ActionIndex action,
                           double value_grad, std::span<double> gradient) const;

  friend bool operator==(const QFunction&, const QFunction&) = default;

 private:
  std::variant<TabularQ, FeedforwardQ> impl_;
};

// Slow-moving copy of a QFunction used to build bootstrap targets.
struct TargetCopy {
  QFunction net;
  double polyak_rate = 0.005;
};

TargetCopy make_target(const QFunction& source, double polyak_rate);

// Polyak-averages `source` into `target.net` at rate alpha. Throws UsageError
// when the two approximators differ in kind or shape.
void polyak_update(TargetCopy& target, const QFunction& source, double alpha);

// Same, at the copy's own polyak_rate.
void polyak_update(TargetCopy& target, const QFunction& source);

}  // namespace batchrl
