#include "prl/optim.hpp"

#include <algorithm>
#include <cmath>

namespace prl {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ValidationError("beta1 must lie in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("beta2 must lie in (0,1)");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (!(grad_clip > 0.0)) throw ValidationError("grad_clip must be positive");
}

Parameter::Parameter(std::string name_, Tensor initial)
    : name(std::move(name_)),
      value(initial.clone(true)),
      adam_m(value.numel(), 0.0),
      adam_v(value.numel(), 0.0) {}

Parameter::Parameter(const Parameter& other)
    : name(other.name),
      value(other.value.defined() ? other.value.clone(true) : Tensor()),
      adam_m(other.adam_m),
      adam_v(other.adam_v),
      step_count(other.step_count) {}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) *this = Parameter(other);
  return *this;
}

void adam_step(std::span<Parameter* const> params, const OptimizerConfig& config) {
  for (Parameter* p : params) {
    auto values = p->value.data();
    auto grads = p->value.grad();
    ++p->step_count;
    const double t = static_cast<double>(p->step_count);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = std::clamp(grads[i], -config.grad_clip, config.grad_clip);
      p->adam_m[i] = config.beta1 * p->adam_m[i] + (1.0 - config.beta1) * g;
      p->adam_v[i] = config.beta2 * p->adam_v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = p->adam_m[i] / correction1;
      const double v_hat = p->adam_v[i] / correction2;
      const double decay = config.learning_rate * config.weight_decay * values[i];
      values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon) + decay;
    }
  }
}

}  // namespace prl
