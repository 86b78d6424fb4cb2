#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "batchrl/random.hpp"
#include "batchrl/types.hpp"

namespace batchrl {

enum class Activation { identity, relu, tanh };

std::string_view to_string(Activation activation);
Activation activation_from_string(std::string_view name);

struct LayerShape {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  Activation activation = Activation::identity;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

// Layer shapes for a plain MLP: hidden layers use `hidden`, the output layer is linear.
std::vector<LayerShape> mlp_shapes(std::span<const std::size_t> widths, Activation hidden);

// One dropout mask per weight layer, applied to that layer's inputs.
// Kept entries are 1/(1-rate) (inverted dropout), dropped entries are 0.
struct DropoutMask {
  std::vector<std::vector<double>> layers;
  std::uint64_t seed = 0;

  friend bool operator==(const DropoutMask&, const DropoutMask&) = default;
};

// Feedforward value network with dropout before every weight layer.
//
// Parameters live in one flat array. For each layer, the weight matrix is
// stored row-major as [outputs][inputs], followed by the bias vector. This
// layout is shared by the optimizer, the Polyak update and checkpoints.
class FeedforwardQ {
 public:
  // All parameters start at zero.
  FeedforwardQ(std::vector<LayerShape> layers, double dropout_rate);

  // Weights and biases uniform in +-1/sqrt(fan_in).
  static FeedforwardQ uniform_init(std::vector<LayerShape> layers, double dropout_rate,
                                   std::uint64_t seed);

  const std::vector<LayerShape>& layers() const { return layers_; }
  double dropout_rate() const { return dropout_rate_; }
  std::size_t input_width() const { return layers_.front().inputs; }
  std::size_t output_width() const { return layers_.back().outputs; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + layers_[layer].inputs * layers_[layer].outputs;
  }

  // Deterministic function of (architecture, rate, seed).
  DropoutMask sample_mask(std::uint64_t seed) const;

  // A null mask disables dropout.
  std::vector<double> forward(std::span<const double> input,
                              const DropoutMask* mask = nullptr) const;

  // Accumulates d(output . output_grad)/d(params) into `gradient`.
  void backward(std::span<const double> input, const DropoutMask* mask,
                std::span<const double> output_grad, std::span<double> gradient) const;

  // Single-head convenience: gradient of output[action] scaled by value_grad.
  void backward(std::span<const double> input, const DropoutMask* mask, ActionIndex action,
                double value_grad, std::span<double> gradient) const;

  // M stochastic passes, each with a fresh mask seeded from `rng`.
  std::vector<std::vector<double>> stochastic_passes(std::span<const double> input,
                                                     std::size_t passes, Rng& rng) const;

  // Element-wise minimum over M stochastic passes (one mask per pass,
  // shared across all action outputs).
  std::vector<double> mc_lower_bound(std::span<const double> input, std::size_t passes,
                                     Rng& rng) const;

  friend bool operator==(const FeedforwardQ&, const FeedforwardQ&) = default;

 private:
  void check_input(std::span<const double> input) const;
  void check_mask(const DropoutMask& mask) const;

  std::vector<LayerShape> layers_;
  double dropout_rate_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Element-wise minimum across rows of equal length.
std::vector<double> elementwise_min(std::span<const std::vector<double>> rows);

}  // namespace batchrl
