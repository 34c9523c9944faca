#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crl/network.hpp"

namespace crl {

enum class OptimizerKind { sgd_momentum, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-2;
  double momentum = 0.9;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Optimizer hyperparameters plus per-parameter moment accumulators.
class OptimizerState {
 public:
  OptimizerState(OptimizerSettings settings, const ModelState& model);

  const OptimizerSettings& settings() const { return settings_; }
  std::int64_t step_count() const { return steps_; }

 private:
  friend void optimizer_update(ModelState&, const GradientSet&, OptimizerState&, double);

  OptimizerSettings settings_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::int64_t steps_ = 0;
};

/// One update with learning rate settings.learning_rate * lr_scale.
/// Non-finite gradients raise NumericalError naming the offending tensor and
/// leave the model untouched.
void optimizer_update(ModelState& model, const GradientSet& grads, OptimizerState& opt,
                      double lr_scale = 1.0);

}  // namespace crl
