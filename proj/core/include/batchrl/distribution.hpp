#pragma once

#include <cstddef>
#include <span>

#include "batchrl/types.hpp"

namespace batchrl {

// Max-shifted softmax. Throws UsageError on an empty input.
ActionDistribution softmax(std::span<const double> logits);

// Max-shifted log(sum(exp(v))). Throws UsageError on an empty input.
double log_sum_exp(std::span<const double> values);

// KL(q || p) with 0 log 0 = 0. Returns +infinity when q puts mass where p has none.
double kl_divergence(const ActionDistribution& q, const ActionDistribution& p);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace batchrl
