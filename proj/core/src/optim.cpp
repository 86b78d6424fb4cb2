#include "batchrl/optim.hpp"

#include <cmath>

#include "batchrl/errors.hpp"
#include "batchrl/q_function.hpp"

namespace batchrl {

SmoothL1 smooth_l1(double prediction, double target) {
  constexpr double kThreshold = 1.0;
  const double d = prediction - target;
  if (std::abs(d) <= kThreshold) return {0.5 * d * d, d};
  return {std::abs(d) - 0.5 * kThreshold, d > 0.0 ? 1.0 : -1.0};
}

StepReport clip_gradient(std::span<double> gradient, double clip, ClipMode mode) {
  double squared = 0.0;
  for (double g : gradient) {
    if (!std::isfinite(g)) throw TrainingError("clip_gradient: non-finite gradient entry");
    squared += g * g;
  }
  StepReport report{std::sqrt(squared), false};
  if (mode == ClipMode::global_norm) {
    if (report.gradient_norm > clip) {
      const double scale = clip / report.gradient_norm;
      for (double& g : gradient) g *= scale;
      report.clipped = true;
    }
  } else {
    for (double& g : gradient) {
      if (std::abs(g) > clip) {
        g = g > 0.0 ? clip : -clip;
        report.clipped = true;
      }
    }
  }
  return report;
}

StepReport clip_and_step(std::span<double> params, std::span<double> gradient,
                         double learning_rate, double clip, ClipMode mode) {
  if (params.size() != gradient.size()) {
    throw UsageError("clip_and_step: gradient shape does not match parameters");
  }
  const StepReport report = clip_gradient(gradient, clip, mode);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * gradient[i];
  return report;
}

Adam::Adam(double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw UsageError("Adam: betas must lie in [0, 1) and epsilon must be positive");
  }
}

StepReport Adam::step(std::span<double> params, std::span<double> gradient, double learning_rate,
                      double clip, ClipMode mode) {
  if (params.size() != gradient.size()) {
    throw UsageError("Adam::step: gradient shape does not match parameters");
  }
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  } else if (m_.size() != params.size()) {
    throw UsageError("Adam::step: parameter count changed between steps");
  }
  const StepReport report = clip_gradient(gradient, clip, mode);
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * gradient[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * gradient[i] * gradient[i];
    const double m_hat = m_[i] / correction1;
    const double v_hat = v_[i] / correction2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + epsilon_);
  }
  return report;
}

void polyak_update(std::span<double> target, std::span<const double> source, double alpha) {
  if (target.size() != source.size()) {
    throw UsageError("polyak_update: target and source shapes differ");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("polyak_update: alpha must lie in (0, 1]");
  const double keep = 1.0 - alpha;
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] = keep * target[i] + alpha * source[i];
  }
}

}  // namespace batchrl
