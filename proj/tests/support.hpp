#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "batchrl/network.hpp"
#include "batchrl/random.hpp"

namespace batchrl::testing {

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform_real(rng, lo, hi);
  return v;
}

// Small MLP with random widths in [2, 5] per layer.
inline FeedforwardQ random_net(Rng& rng, std::size_t hidden_layers, Activation activation,
                               double dropout_rate) {
  std::vector<std::size_t> widths;
  for (std::size_t l = 0; l < hidden_layers + 2; ++l) widths.push_back(2 + uniform_index(rng, 4));
  return FeedforwardQ::uniform_init(mlp_shapes(widths, activation), dropout_rate, rng());
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};

// Analytic gradient of f(params) = forward(input, mask) . output_grad against
// central differences.
inline GradientCheck check_gradient(const FeedforwardQ& net, std::span<const double> input,
                                    const DropoutMask* mask, std::span<const double> output_grad,
                                    double step = 1e-5) {
  std::vector<double> analytic(net.parameter_count(), 0.0);
  net.backward(input, mask, output_grad, analytic);

  auto objective = [&](const FeedforwardQ& n) {
    const auto out = n.forward(input, mask);
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) sum += out[i] * output_grad[i];
    return sum;
  };

  GradientCheck result;
  result.parameters = net.parameter_count();
  FeedforwardQ probe = net;
  for (std::size_t p = 0; p < probe.parameter_count(); ++p) {
    const double original = probe.parameters()[p];
    probe.parameters()[p] = original + step;
    const double up = objective(probe);
    probe.parameters()[p] = original - step;
    const double down = objective(probe);
    probe.parameters()[p] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[p]), 1e-6});
    result.max_relative_error =
        std::max(result.max_relative_error, std::abs(numeric - analytic[p]) / scale);
  }
  return result;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace batchrl::testing
