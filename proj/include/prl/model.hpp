#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prl/env.hpp"
#include "prl/ops.hpp"
#include "prl/optim.hpp"
#include "prl/tensor.hpp"

namespace prl {

struct ConvLayerSpec {
  std::size_t channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  /// Adds the layer input to its output. Needs stride 1 and equal channels.
  bool residual = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct ModelConfig {
  static constexpr std::size_t kControlDim = 3;

  std::size_t frame_stack = 4;
  std::size_t frame_height = 16;
  std::size_t frame_width = 16;
  std::size_t latent_dim = 32;
  std::size_t hidden_dim = 128;
  std::size_t unroll = 10;
  std::vector<ConvLayerSpec> perception{{8, 3, 2, 1, false}, {8, 3, 2, 1, false}};

  static ModelConfig desk();
  /// 4x84x84 input, 100-dim latent, 500-unit transition network.
  static ModelConfig paper_scale();

  void validate() const;
  /// Spatial size after the convolution stack.
  std::pair<std::size_t, std::size_t> perception_output_hw() const;
  bool operator==(const ModelConfig&) const = default;
};

using LatentState = std::vector<double>;

struct StepPrediction {
  double p_death = 0.5;
  double p_point = 0.5;
};

struct RrnnOutput {
  Tensor next;
  Tensor residual;
};

/// Perception -> residual recurrent prediction -> valuation.
///
/// Const members run in eval mode and never mutate state, so one Model may
/// be shared by concurrent readers. The *_training members use batch
/// statistics and update the batch-norm running averages.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Batched graph-building API. frames: [B x F x H x W], h: [B x d],
  // controls: [B x 3]. Predictions are [B x 2] = (p_death, p_point).
  Tensor perceive(const Tensor& frames) const;
  Tensor perceive_training(const Tensor& frames);
  RrnnOutput rrnn_step(const Tensor& h, const Tensor& controls) const;
  Tensor valuate(const Tensor& h) const;
  std::vector<Tensor> rollout(const Tensor& frames, std::span<const Tensor> controls) const;
  std::vector<Tensor> rollout_training(const Tensor& frames, std::span<const Tensor> controls);
  std::vector<Tensor> rollout_from(const Tensor& h0, std::span<const Tensor> controls) const;

  // Single-sample convenience API.
  LatentState perceive(const Observation& obs) const;
  std::pair<LatentState, std::vector<double>> rrnn_step(const LatentState& h, const ControlVector& c) const;
  StepPrediction valuate(const LatentState& h) const;
  std::vector<StepPrediction> rollout(const Observation& obs, std::span<const ControlVector> controls) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> perception_parameters();
  std::vector<Parameter*> prediction_parameters();
  std::vector<Parameter*> valuation_parameters();
  std::vector<BatchNormState*> batch_norm_states();
  std::vector<const BatchNormState*> batch_norm_states() const;
  void zero_grad();

  /// Number of perception forward passes so far (instrumentation).
  std::size_t perception_calls() const { return perception_calls_.load(); }

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

 private:
  struct ConvLayer {
    ConvLayerSpec spec;
    Parameter weight, bias, gain, shift;
    BatchNormState stats;
  };
  Tensor perceive_impl(const Tensor& frames, Mode mode, std::span<BatchNormState> stats) const;
  void check_frames(const Tensor& frames) const;

  ModelConfig config_;
  std::vector<ConvLayer> conv_;
  Parameter encode_w_, encode_b_;
  Parameter f1_w_, f1_b_, f2_w_, f2_b_;
  Parameter v1_w_, v1_b_, v2_w_, v2_b_;
  mutable std::atomic<std::size_t> perception_calls_{0};
};

/// Mean binary cross-entropy over both heads and every step. targets is
/// [B x 2k] with columns (died_by_now, scored_clean) per step.
Tensor model_loss(std::span<const Tensor> predictions, const Tensor& targets);
double model_loss(std::span<const StepPrediction> predictions, std::span<const TargetVector> targets);

/// Packs per-step [B x 3] control tensors from B sequences of equal length.
std::vector<Tensor> control_tensors(std::span<const std::vector<ControlVector>> sequences);
Tensor observation_tensor(std::span<const Observation> observations);

}  // namespace prl
