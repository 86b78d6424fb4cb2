#include "batchrl/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "batchrl/errors.hpp"

namespace batchrl {

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw UsageError("log_sum_exp: empty input");
  const double peak = *std::max_element(values.begin(), values.end());
  if (std::isinf(peak)) return peak;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

ActionDistribution softmax(std::span<const double> logits) {
  if (logits.empty()) throw UsageError("softmax: empty input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - peak);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return ActionDistribution(std::move(probs));
}

double kl_divergence(const ActionDistribution& q, const ActionDistribution& p) {
  if (q.size() != p.size()) throw UsageError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += q[i] * (std::log(q[i]) - std::log(p[i]));
  }
  // Rounding can leave a tiny negative residue for near-identical inputs.
  return std::max(kl, 0.0);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw UsageError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace batchrl
