#include "crl/optimizer.hpp"

#include <cmath>

#include "crl/error.hpp"

namespace crl {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd" || name == "sgd-momentum") return OptimizerKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void OptimizerSettings::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be a finite non-negative number");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

OptimizerState::OptimizerState(OptimizerSettings settings, const ModelState& model)
    : settings_(settings) {
  settings_.validate();
  for (const Tensor* p : model.parameters()) {
    first_.emplace_back(p->shape(), 0.0);
    if (settings_.kind == OptimizerKind::adam) second_.emplace_back(p->shape(), 0.0);
  }
}

void optimizer_update(ModelState& model, const GradientSet& grads, OptimizerState& opt,
                      double lr_scale) {
  auto params = model.parameters();
  if (grads.tensors.size() != params.size() || opt.first_.size() != params.size()) {
    throw ShapeError("optimizer_update: gradient set does not match model parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads.tensors[k].shape() != params[k]->shape() || opt.first_[k].shape() != params[k]->shape()) {
      throw ShapeError("optimizer_update: shape mismatch for " + model.parameter_name(k) + ": " +
                       params[k]->shape_string() + " vs " + grads.tensors[k].shape_string());
    }
    if (!all_finite(grads.tensors[k])) {
      throw NumericalError("training diverged: non-finite gradient in " + model.parameter_name(k));
    }
  }

  const auto& s = opt.settings_;
  const double lr = s.learning_rate * lr_scale;
  ++opt.steps_;
  if (s.kind == OptimizerKind::sgd_momentum) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k]->data();
      auto& v = opt.first_[k].data();
      const auto& g = grads.tensors[k].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = s.momentum * v[i] + g[i];
        p[i] -= lr * v[i];
      }
    }
    return;
  }

  const double t = static_cast<double>(opt.steps_);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data();
    auto& m = opt.first_[k].data();
    auto& v = opt.second_[k].data();
    const auto& g = grads.tensors[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + s.epsilon);
    }
  }
}

}  // namespace crl
