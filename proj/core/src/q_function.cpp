#include "batchrl/q_function.hpp"

#include <string>

#include "batchrl/errors.hpp"
#include "batchrl/optim.hpp"

namespace batchrl {

TabularQ::TabularQ(std::size_t state_count, std::size_t action_count, double initial_value)
    : state_count_(state_count),
      action_count_(action_count),
      table_(state_count * action_count, initial_value) {
  if (state_count == 0 || action_count == 0) throw UsageError("TabularQ: empty table");
}

double TabularQ::at(std::size_t state, ActionIndex action) const {
  return table_[state * action_count_ + action];
}

double& TabularQ::at(std::size_t state, ActionIndex action) {
  return table_[state * action_count_ + action];
}

std::span<const double> TabularQ::row(std::size_t state) const {
  return std::span<const double>(table_).subspan(state * action_count_, action_count_);
}

std::size_t TabularQ::index_of(const State& state) const {
  if (state.id < 0 || static_cast<std::size_t>(state.id) >= state_count_) {
    throw UsageError("TabularQ: state id " + std::to_string(state.id) + " outside [0, " +
                     std::to_string(state_count_) + ")");
  }
  return static_cast<std::size_t>(state.id);
}

std::size_t QFunction::action_count() const {
  if (const auto* t = tabular()) return t->action_count();
  return network()->output_width();
}

double QFunction::dropout_rate() const {
  if (const auto* n = network()) return n->dropout_rate();
  return 0.0;
}

std::span<double> QFunction::parameters() {
  return std::visit([](auto& impl) { return impl.parameters(); }, impl_);
}

std::span<const double> QFunction::parameters() const {
  return std::visit([](const auto& impl) { return impl.parameters(); }, impl_);
}

std::vector<double> QFunction::values(const State& state) const {
  return values(state, nullptr);
}

std::vector<double> QFunction::values(const State& state, const DropoutMask* mask) const {
  if (const auto* t = tabular()) {
    const auto row = t->row(t->index_of(state));
    return {row.begin(), row.end()};
  }
  return network()->forward(state.features, mask);
}

DropoutMask QFunction::sample_mask(std::uint64_t seed) const {
  if (const auto* n = network()) return n->sample_mask(seed);
  return DropoutMask{{}, seed};
}

std::vector<double> QFunction::mc_lower_bound(const State& state, std::size_t passes,
                                              Rng& rng) const {
  if (passes == 0) throw UsageError("mc_lower_bound: need at least one pass");
  if (is_tabular()) return values(state);
  return network()->mc_lower_bound(state.features, passes, rng);
}

void QFunction::accumulate_gradient(const State& state, const DropoutMask* mask,
                                    ActionIndex action, double value_grad,
                                    std::span<double> gradient) const {
  if (gradient.size() != parameter_count()) {
    throw UsageError("accumulate_gradient: gradient buffer does not match parameter count");
  }
  if (const auto* t = tabular()) {
    if (action >= t->action_count()) throw UsageError("accumulate_gradient: action out of range");
    gradient[t->index_of(state) * t->action_count() + action] += value_grad;
    return;
  }
  network()->backward(state.features, mask, action, value_grad, gradient);
}

TargetCopy make_target(const QFunction& source, double polyak_rate) {
  if (!(polyak_rate > 0.0 && polyak_rate <= 1.0)) {
    throw UsageError("TargetCopy: polyak rate must lie in (0, 1]");
  }
  return TargetCopy{source, polyak_rate};
}

namespace {

bool same_shape(const QFunction& a, const QFunction& b) {
  if (a.is_tabular() != b.is_tabular()) return false;
  if (a.is_tabular()) {
    return a.tabular()->state_count() == b.tabular()->state_count() &&
           a.tabular()->action_count() == b.tabular()->action_count();
  }
  return a.network()->layers() == b.network()->layers();
}

}  // namespace

void polyak_update(TargetCopy& target, const QFunction& source, double alpha) {
  if (!same_shape(target.net, source)) {
    throw UsageError("polyak_update: target copy and source have different shapes");
  }
  polyak_update(target.net.parameters(), source.parameters(), alpha);
}

void polyak_update(TargetCopy& target, const QFunction& source) {
  polyak_update(target, source, target.polyak_rate);
}

}  // namespace batchrl
