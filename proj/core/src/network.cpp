#include "batchrl/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

double activate(Activation activation, double z) {
  switch (activation) {
    case Activation::identity:
      return z;
    case Activation::relu:
      return z > 0.0 ? z : 0.0;
    case Activation::tanh:
      return std::tanh(z);
  }
  return z;
}

double activation_slope(Activation activation, double z) {
  switch (activation) {
    case Activation::identity:
      return 1.0;
    case Activation::relu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

// Per-layer intermediates of one forward pass.
struct Trace {
  std::vector<std::vector<double>> inputs;  // masked inputs to each layer
  std::vector<std::vector<double>> pre;     // pre-activations
};

}  // namespace

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::identity:
      return "identity";
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw UsageError("unknown activation '" + std::string(name) + "'");
}

std::vector<LayerShape> mlp_shapes(std::span<const std::size_t> widths, Activation hidden) {
  if (widths.size() < 2) throw UsageError("mlp_shapes: need at least input and output widths");
  std::vector<LayerShape> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.push_back({widths[i], widths[i + 1], last ? Activation::identity : hidden});
  }
  return layers;
}

FeedforwardQ::FeedforwardQ(std::vector<LayerShape> layers, double dropout_rate)
    : layers_(std::move(layers)), dropout_rate_(dropout_rate) {
  if (layers_.empty()) throw UsageError("FeedforwardQ: no layers");
  if (!(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0)) {
    throw UsageError("FeedforwardQ: dropout rate must lie in [0, 1)");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& shape = layers_[l];
    if (shape.inputs == 0 || shape.outputs == 0) throw UsageError("FeedforwardQ: empty layer");
    if (l > 0 && layers_[l - 1].outputs != shape.inputs) {
      throw UsageError("FeedforwardQ: layer " + std::to_string(l) + " expects " +
                       std::to_string(shape.inputs) + " inputs but previous layer emits " +
                       std::to_string(layers_[l - 1].outputs));
    }
    offsets_.push_back(offset);
    offset += shape.inputs * shape.outputs + shape.outputs;
  }
  params_.assign(offset, 0.0);
}

FeedforwardQ FeedforwardQ::uniform_init(std::vector<LayerShape> layers, double dropout_rate,
                                        std::uint64_t seed) {
  FeedforwardQ net(std::move(layers), dropout_rate);
  Rng rng(seed);
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    const auto& shape = net.layers_[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.inputs));
    const std::size_t begin = net.offsets_[l];
    const std::size_t end = begin + shape.inputs * shape.outputs + shape.outputs;
    for (std::size_t i = begin; i < end; ++i) net.params_[i] = uniform_real(rng, -bound, bound);
  }
  return net;
}

DropoutMask FeedforwardQ::sample_mask(std::uint64_t seed) const {
  DropoutMask mask;
  mask.seed = seed;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - dropout_rate_);
  for (const auto& shape : layers_) {
    std::vector<double> layer(shape.inputs, 1.0);
    if (dropout_rate_ > 0.0) {
      for (double& m : layer) m = uniform01(rng) < dropout_rate_ ? 0.0 : keep_scale;
    }
    mask.layers.push_back(std::move(layer));
  }
  return mask;
}

void FeedforwardQ::check_input(std::span<const double> input) const {
  if (input.size() != input_width()) {
    throw UsageError("FeedforwardQ: input has " + std::to_string(input.size()) +
                     " features, network expects " + std::to_string(input_width()));
  }
}

void FeedforwardQ::check_mask(const DropoutMask& mask) const {
  if (mask.layers.size() != layers_.size()) {
    throw UsageError("FeedforwardQ: dropout mask does not match the network's layer count");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (mask.layers[l].size() != layers_[l].inputs) {
      throw UsageError("FeedforwardQ: dropout mask width mismatch at layer " + std::to_string(l));
    }
  }
}

namespace {

Trace run_forward(const std::vector<LayerShape>& layers, const std::vector<std::size_t>& offsets,
                  std::span<const double> params, std::span<const double> input,
                  const DropoutMask* mask) {
  Trace trace;
  std::vector<double> activation(input.begin(), input.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& shape = layers[l];
    if (mask != nullptr) {
      for (std::size_t i = 0; i < shape.inputs; ++i) activation[i] *= mask->layers[l][i];
    }
    const double* weights = params.data() + offsets[l];
    const double* bias = weights + shape.inputs * shape.outputs;
    std::vector<double> pre(shape.outputs);
    for (std::size_t o = 0; o < shape.outputs; ++o) {
      const double* row = weights + o * shape.inputs;
      double z = bias[o];
      for (std::size_t i = 0; i < shape.inputs; ++i) z += row[i] * activation[i];
      pre[o] = z;
    }
    std::vector<double> next(shape.outputs);
    for (std::size_t o = 0; o < shape.outputs; ++o) next[o] = activate(shape.activation, pre[o]);
    trace.inputs.push_back(std::move(activation));
    trace.pre.push_back(std::move(pre));
    activation = std::move(next);
  }
  trace.inputs.push_back(std::move(activation));  // final output
  return trace;
}

}  // namespace

std::vector<double> FeedforwardQ::forward(std::span<const double> input,
                                          const DropoutMask* mask) const {
  check_input(input);
  if (mask != nullptr) check_mask(*mask);
  Trace trace = run_forward(layers_, offsets_, params_, input, mask);
  return std::move(trace.inputs.back());
}

void FeedforwardQ::backward(std::span<const double> input, const DropoutMask* mask,
                            std::span<const double> output_grad,
                            std::span<double> gradient) const {
  check_input(input);
  if (mask != nullptr) check_mask(*mask);
  if (output_grad.size() != output_width()) {
    throw UsageError("FeedforwardQ::backward: output gradient width mismatch");
  }
  if (gradient.size() != params_.size()) {
    throw UsageError("FeedforwardQ::backward: gradient buffer does not match parameter count");
  }
  const Trace trace = run_forward(layers_, offsets_, params_, input, mask);

  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& shape = layers_[l];
    for (std::size_t o = 0; o < shape.outputs; ++o) {
      delta[o] *= activation_slope(shape.activation, trace.pre[l][o]);
    }
    const std::vector<double>& layer_input = trace.inputs[l];
    double* weight_grad = gradient.data() + offsets_[l];
    double* bias_grad = weight_grad + shape.inputs * shape.outputs;
    const double* weights = params_.data() + offsets_[l];
    std::vector<double> input_grad(shape.inputs, 0.0);
    for (std::size_t o = 0; o < shape.outputs; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      bias_grad[o] += d;
      double* row_grad = weight_grad + o * shape.inputs;
      const double* row = weights + o * shape.inputs;
      for (std::size_t i = 0; i < shape.inputs; ++i) {
        row_grad[i] += d * layer_input[i];
        input_grad[i] += d * row[i];
      }
    }
    if (l == 0) break;
    if (mask != nullptr) {
      for (std::size_t i = 0; i < shape.inputs; ++i) input_grad[i] *= mask->layers[l][i];
    }
    delta = std::move(input_grad);
  }
}

void FeedforwardQ::backward(std::span<const double> input, const DropoutMask* mask,
                            ActionIndex action, double value_grad,
                            std::span<double> gradient) const {
  if (action >= output_width()) throw UsageError("FeedforwardQ::backward: action out of range");
  std::vector<double> output_grad(output_width(), 0.0);
  output_grad[action] = value_grad;
  backward(input, mask, output_grad, gradient);
}

std::vector<std::vector<double>> FeedforwardQ::stochastic_passes(std::span<const double> input,
                                                                 std::size_t passes,
                                                                 Rng& rng) const {
  if (passes == 0) throw UsageError("stochastic_passes: need at least one pass");
  std::vector<std::vector<double>> rows;
  rows.reserve(passes);
  for (std::size_t i = 0; i < passes; ++i) {
    const DropoutMask mask = sample_mask(rng());
    rows.push_back(forward(input, &mask));
  }
  return rows;
}

std::vector<double> FeedforwardQ::mc_lower_bound(std::span<const double> input,
                                                 std::size_t passes, Rng& rng) const {
  if (passes == 0) throw UsageError("mc_lower_bound: need at least one pass");
  if (dropout_rate_ == 0.0) return forward(input);
  const auto rows = stochastic_passes(input, passes, rng);
  return elementwise_min(rows);
}

std::vector<double> elementwise_min(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw UsageError("elementwise_min: no rows");
  std::vector<double> result = rows.front();
  for (const auto& row : rows.subspan(1)) {
    if (row.size() != result.size()) throw UsageError("elementwise_min: ragged rows");
    for (std::size_t i = 0; i < row.size(); ++i) result[i] = std::min(result[i], row[i]);
  }
  return result;
}

}  // namespace batchrl
