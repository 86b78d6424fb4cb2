#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace batchrl {

// All stochastic code draws from this engine. Distributions below are
// written out by hand so streams are identical across standard libraries.
using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

// Uniform double in [0, 1) with 53 bits of precision.
double uniform01(Rng& rng);

double uniform_real(Rng& rng, double lo, double hi);

// Uniform integer in [0, n). n must be > 0.
std::size_t uniform_index(Rng& rng, std::size_t n);

// Draws an index with probability proportional to weights[i].
// Weights must be non-negative with a positive sum.
std::size_t sample_categorical(std::span<const double> weights, Rng& rng);

}  // namespace batchrl
