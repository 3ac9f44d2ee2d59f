#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "prl/tensor.hpp"

namespace prl::testing {

// Central-difference check of d loss / d leaf for every leaf. Relative
// error is taken over each leaf as a whole: |a - n| / max(|a|, |n|, 1e-7).
// The floor keeps gradients that are zero by construction (a bias feeding
// batch norm) from turning difference noise into a large ratio.
inline double max_relative_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                 double h = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  loss_fn().backward();
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<double> numeric(analytic.size());
    auto values = leaf.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-7});
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

}  // namespace prl::testing
