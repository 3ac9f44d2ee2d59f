#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prl/tensor.hpp"

namespace prl {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;

  void validate() const;
};

/// A trainable tensor together with its Adam moment estimates.
///
/// Copies are deep: a copied Parameter owns fresh storage.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string name, Tensor initial);
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  void zero_grad() { value.zero_grad(); }
};

/// One Adam update. Gradients are clamped element-wise to
/// [-grad_clip, grad_clip] first; weight decay is decoupled from the moments.
void adam_step(std::span<Parameter* const> params, const OptimizerConfig& config);

}  // namespace prl
