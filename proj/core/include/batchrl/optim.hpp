#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace batchrl {

struct SmoothL1 {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d prediction
};

// Huber loss with threshold 1: 0.5 d^2 inside, |d| - 0.5 outside.
SmoothL1 smooth_l1(double prediction, double target);

enum class ClipMode { global_norm, elementwise };

struct StepReport {
  double gradient_norm = 0.0;  // L2 norm before clipping
  bool clipped = false;
};

// Clips `gradient` in place. Throws TrainingError on any non-finite entry.
StepReport clip_gradient(std::span<double> gradient, double clip, ClipMode mode = ClipMode::global_norm);

// Clips `gradient` in place, then applies params -= learning_rate * gradient.
// Throws TrainingError, leaving params untouched, if any gradient entry is non-finite.
StepReport clip_and_step(std::span<double> params, std::span<double> gradient,
                         double learning_rate, double clip, ClipMode mode = ClipMode::global_norm);

enum class OptimizerKind { sgd, adam };

// Adam with bias correction. Moments are sized on the first step.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  // Clips, then updates params in place. Params are untouched on TrainingError.
  StepReport step(std::span<double> params, std::span<double> gradient, double learning_rate,
                  double clip, ClipMode mode = ClipMode::global_norm);

  std::size_t step_count() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// target <- (1 - alpha) * target + alpha * source, element-wise.
void polyak_update(std::span<double> target, std::span<const double> source, double alpha);

}  // namespace batchrl
