#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "prl/tensor.hpp"

namespace prl {

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kLossClamp = 1e-7;

/// y = x W + b with x [B x In], W [In x Out], b [Out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);

/// Per-row (x - mean) / (std + eps) over the last axis of a [B x N] tensor.
/// Population std, no learned gain or bias, so every output element is
/// bounded by sqrt(N) in magnitude.
Tensor layer_norm(const Tensor& input, double epsilon = kLayerNormEpsilon);

enum class Mode { train, eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization of a [B x C x H x W] tensor followed by a
/// learned affine map. Train mode uses batch statistics and folds them into
/// `state`; eval mode uses the running statistics.
Tensor batch_norm(const Tensor& input, BatchNormState& state, const Tensor& gain, const Tensor& bias,
                  Mode mode, double epsilon = kBatchNormEpsilon);

/// Cross-correlation of [B x Cin x H x W] with [Cout x Cin x K x K].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
/// With a mask the mean is weighted: sum(m * l) / sum(m).
Tensor bce_loss(const Tensor& prediction, const Tensor& target,
                const std::optional<Tensor>& weight_mask = std::nullopt);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& input);
Tensor reshape(const Tensor& input, Shape shape);
/// Concatenates [B x n_i] tensors along the column axis.
Tensor concat_cols(std::span<const Tensor> parts);

}  // namespace prl
