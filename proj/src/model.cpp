#include "prl/model.hpp"

#include <cmath>
#include <random>

namespace prl {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.frame_stack = 4;
  c.frame_height = 84;
  c.frame_width = 84;
  c.latent_dim = 100;
  c.hidden_dim = 500;
  c.unroll = 25;
  // Residual encoder: each downsampling layer is followed by a same-width
  // residual layer, every layer with batch norm and ReLU.
  c.perception = {
      {32, 3, 2, 1, false}, {32, 3, 1, 1, true},  {64, 3, 2, 1, false}, {64, 3, 1, 1, true},
      {64, 3, 2, 1, false}, {64, 3, 1, 1, true},  {128, 3, 2, 1, false},
  };
  return c;
}

void ModelConfig::validate() const {
  if (frame_stack == 0 || frame_height == 0 || frame_width == 0) {
    throw ValidationError("frame dimensions must be positive");
  }
  if (latent_dim < 2) throw ValidationError("latent_dim must be at least 2");
  if (hidden_dim == 0) throw ValidationError("hidden_dim must be positive");
  if (unroll == 0) throw ValidationError("unroll must be positive");
  std::size_t channels = frame_stack;
  for (const auto& layer : perception) {
    if (layer.channels == 0 || layer.kernel == 0 || layer.stride == 0) {
      throw ValidationError("perception layer sizes must be positive");
    }
    if (layer.residual && (layer.stride != 1 || layer.channels != channels || layer.kernel != 2 * layer.padding + 1)) {
      throw ValidationError("residual perception layers must preserve shape");
    }
    channels = layer.channels;
  }
  perception_output_hw();
}

std::pair<std::size_t, std::size_t> ModelConfig::perception_output_hw() const {
  std::size_t h = frame_height, w = frame_width;
  for (const auto& layer : perception) {
    if (layer.kernel > h + 2 * layer.padding || layer.kernel > w + 2 * layer.padding) {
      throw ValidationError("perception kernel larger than its padded input");
    }
    h = (h + 2 * layer.padding - layer.kernel) / layer.stride + 1;
    w = (w + 2 * layer.padding - layer.kernel) / layer.stride + 1;
  }
  return {h, w};
}

namespace {

Parameter uniform_param(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Parameter(std::move(name), Tensor::from(std::move(shape), std::move(values)));
}

Parameter constant_param(std::string name, std::size_t n, double value) {
  return Parameter(std::move(name), Tensor::filled({n}, value));
}

std::vector<double> row_values(const Tensor& t, std::size_t row) {
  const std::size_t width = t.dim(1);
  auto d = t.data().subspan(row * width, width);
  return {d.begin(), d.end()};
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t channels = config_.frame_stack;
  for (std::size_t i = 0; i < config_.perception.size(); ++i) {
    const auto& spec = config_.perception[i];
    const std::string prefix = "perception.conv" + std::to_string(i);
    ConvLayer layer{spec,
                    uniform_param(prefix + ".weight", {spec.channels, channels, spec.kernel, spec.kernel},
                                  channels * spec.kernel * spec.kernel, rng),
                    constant_param(prefix + ".bias", spec.channels, 0.0),
                    constant_param(prefix + ".bn_gain", spec.channels, 1.0),
                    constant_param(prefix + ".bn_bias", spec.channels, 0.0),
                    BatchNormState(spec.channels)};
    conv_.push_back(std::move(layer));
    channels = spec.channels;
  }
  const auto [oh, ow] = config_.perception_output_hw();
  const std::size_t flat = channels * oh * ow;
  const std::size_t d = config_.latent_dim;
  const std::size_t in_f = d + ModelConfig::kControlDim;
  encode_w_ = uniform_param("perception.encode.weight", {flat, d}, flat, rng);
  encode_b_ = constant_param("perception.encode.bias", d, 0.0);
  f1_w_ = uniform_param("prediction.f1.weight", {in_f, config_.hidden_dim}, in_f, rng);
  f1_b_ = constant_param("prediction.f1.bias", config_.hidden_dim, 0.0);
  f2_w_ = uniform_param("prediction.f2.weight", {config_.hidden_dim, d}, config_.hidden_dim, rng);
  f2_b_ = constant_param("prediction.f2.bias", d, 0.0);
  v1_w_ = uniform_param("valuation.v1.weight", {d, d}, d, rng);
  v1_b_ = constant_param("valuation.v1.bias", d, 0.0);
  v2_w_ = uniform_param("valuation.v2.weight", {d, 2}, d, rng);
  v2_b_ = constant_param("valuation.v2.bias", 2, 0.0);
}

Model::Model(const Model& other)
    : config_(other.config_),
      conv_(other.conv_),
      encode_w_(other.encode_w_),
      encode_b_(other.encode_b_),
      f1_w_(other.f1_w_),
      f1_b_(other.f1_b_),
      f2_w_(other.f2_w_),
      f2_b_(other.f2_b_),
      v1_w_(other.v1_w_),
      v1_b_(other.v1_b_),
      v2_w_(other.v2_w_),
      v2_b_(other.v2_b_) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

Model::Model(Model&& other) noexcept
    : config_(std::move(other.config_)),
      conv_(std::move(other.conv_)),
      encode_w_(std::move(other.encode_w_)),
      encode_b_(std::move(other.encode_b_)),
      f1_w_(std::move(other.f1_w_)),
      f1_b_(std::move(other.f1_b_)),
      f2_w_(std::move(other.f2_w_)),
      f2_b_(std::move(other.f2_b_)),
      v1_w_(std::move(other.v1_w_)),
      v1_b_(std::move(other.v1_b_)),
      v2_w_(std::move(other.v2_w_)),
      v2_b_(std::move(other.v2_b_)),
      perception_calls_(other.perception_calls_.load()) {}

Model& Model::operator=(Model&& other) noexcept {
  config_ = std::move(other.config_);
  conv_ = std::move(other.conv_);
  encode_w_ = std::move(other.encode_w_);
  encode_b_ = std::move(other.encode_b_);
  f1_w_ = std::move(other.f1_w_);
  f1_b_ = std::move(other.f1_b_);
  f2_w_ = std::move(other.f2_w_);
  f2_b_ = std::move(other.f2_b_);
  v1_w_ = std::move(other.v1_w_);
  v1_b_ = std::move(other.v1_b_);
  v2_w_ = std::move(other.v2_w_);
  v2_b_ = std::move(other.v2_b_);
  perception_calls_.store(other.perception_calls_.load());
  return *this;
}

void Model::check_frames(const Tensor& frames) const {
  const Shape expected{frames.rank() == 4 ? frames.dim(0) : 1, config_.frame_stack, config_.frame_height,
                       config_.frame_width};
  if (frames.shape() != expected) {
    throw DimensionError("perceive: observation " + shape_string(frames.shape()) + " does not match model input " +
                         shape_string(expected));
  }
}

Tensor Model::perceive_impl(const Tensor& frames, Mode mode, std::span<BatchNormState> stats) const {
  check_frames(frames);
  ++perception_calls_;
  Tensor x = frames;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    const auto& layer = conv_[i];
    Tensor y = conv2d(x, layer.weight.value, layer.bias.value, layer.spec.stride, layer.spec.padding);
    y = relu(batch_norm(y, stats[i], layer.gain.value, layer.shift.value, mode));
    x = layer.spec.residual ? add(x, y) : y;
  }
  const std::size_t batch = frames.dim(0);
  x = reshape(x, {batch, x.numel() / batch});
  return linear(x, encode_w_.value, encode_b_.value);
}

Tensor Model::perceive(const Tensor& frames) const {
  // Eval mode only reads the running statistics.
  std::vector<BatchNormState> stats;
  stats.reserve(conv_.size());
  for (const auto& layer : conv_) stats.push_back(layer.stats);
  return perceive_impl(frames, Mode::eval, stats);
}

Tensor Model::perceive_training(const Tensor& frames) {
  std::vector<BatchNormState> stats;
  stats.reserve(conv_.size());
  for (const auto& layer : conv_) stats.push_back(layer.stats);
  Tensor out = perceive_impl(frames, Mode::train, stats);
  for (std::size_t i = 0; i < conv_.size(); ++i) conv_[i].stats = std::move(stats[i]);
  return out;
}

RrnnOutput Model::rrnn_step(const Tensor& h, const Tensor& controls) const {
  if (h.rank() != 2 || h.dim(1) != config_.latent_dim || controls.rank() != 2 ||
      controls.dim(1) != ModelConfig::kControlDim || controls.dim(0) != h.dim(0)) {
    throw DimensionError("rrnn_step: latent " + shape_string(h.shape()) + " and controls " +
                         shape_string(controls.shape()) + " do not match the model");
  }
  // The control inputs bypass the first ReLU.
  const Tensor parts[] = {relu(layer_norm(h)), controls};
  Tensor hidden = linear(concat_cols(parts), f1_w_.value, f1_b_.value);
  Tensor residual = linear(relu(hidden), f2_w_.value, f2_b_.value);
  return {add(h, residual), residual};
}

Tensor Model::valuate(const Tensor& h) const {
  if (h.rank() != 2 || h.dim(1) != config_.latent_dim) {
    throw DimensionError("valuate: latent " + shape_string(h.shape()) + " does not match the model");
  }
  Tensor hidden = relu(linear(layer_norm(h), v1_w_.value, v1_b_.value));
  return sigmoid(linear(hidden, v2_w_.value, v2_b_.value));
}

std::vector<Tensor> Model::rollout_from(const Tensor& h0, std::span<const Tensor> controls) const {
  if (controls.empty()) throw ValidationError("rollout: control sequence is empty");
  std::vector<Tensor> predictions;
  predictions.reserve(controls.size());
  Tensor h = h0;
  for (const auto& c : controls) {
    h = rrnn_step(h, c).next;
    predictions.push_back(valuate(h));
  }
  return predictions;
}

std::vector<Tensor> Model::rollout(const Tensor& frames, std::span<const Tensor> controls) const {
  if (controls.empty()) throw ValidationError("rollout: control sequence is empty");
  return rollout_from(perceive(frames), controls);
}

std::vector<Tensor> Model::rollout_training(const Tensor& frames, std::span<const Tensor> controls) {
  if (controls.empty()) throw ValidationError("rollout: control sequence is empty");
  return rollout_from(perceive_training(frames), controls);
}

LatentState Model::perceive(const Observation& obs) const {
  NoGradGuard guard;
  const Observation batch[] = {obs};
  return row_values(perceive(observation_tensor(batch)), 0);
}

std::pair<LatentState, std::vector<double>> Model::rrnn_step(const LatentState& h, const ControlVector& c) const {
  NoGradGuard guard;
  const Tensor ht = Tensor::from({1, h.size()}, h);
  const Tensor ct = Tensor::from({1, 3}, {double(c.shoot), double(c.horizontal), double(c.vertical)});
  const auto out = rrnn_step(ht, ct);
  return {row_values(out.next, 0), row_values(out.residual, 0)};
}

StepPrediction Model::valuate(const LatentState& h) const {
  NoGradGuard guard;
  const Tensor p = valuate(Tensor::from({1, h.size()}, h));
  return {p[0], p[1]};
}

std::vector<StepPrediction> Model::rollout(const Observation& obs, std::span<const ControlVector> controls) const {
  NoGradGuard guard;
  const Observation batch[] = {obs};
  const std::vector<ControlVector> seq(controls.begin(), controls.end());
  const std::vector<ControlVector>* seqs = &seq;
  const auto ct = control_tensors(std::span(seqs, 1));
  const auto preds = rollout(observation_tensor(batch), ct);
  std::vector<StepPrediction> out;
  for (const auto& p : preds) out.push_back({p[0], p[1]});
  return out;
}

std::vector<Parameter*> Model::perception_parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : conv_) {
    out.insert(out.end(), {&layer.weight, &layer.bias, &layer.gain, &layer.shift});
  }
  out.insert(out.end(), {&encode_w_, &encode_b_});
  return out;
}

std::vector<Parameter*> Model::prediction_parameters() { return {&f1_w_, &f1_b_, &f2_w_, &f2_b_}; }
std::vector<Parameter*> Model::valuation_parameters() { return {&v1_w_, &v1_b_, &v2_w_, &v2_b_}; }

std::vector<Parameter*> Model::parameters() {
  auto out = perception_parameters();
  for (auto* p : prediction_parameters()) out.push_back(p);
  for (auto* p : valuation_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<BatchNormState*> Model::batch_norm_states() {
  std::vector<BatchNormState*> out;
  for (auto& layer : conv_) out.push_back(&layer.stats);
  return out;
}

std::vector<const BatchNormState*> Model::batch_norm_states() const {
  std::vector<const BatchNormState*> out;
  for (const auto& layer : conv_) out.push_back(&layer.stats);
  return out;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

Tensor model_loss(std::span<const Tensor> predictions, const Tensor& targets) {
  if (predictions.empty()) throw ValidationError("model_loss: no predictions");
  if (targets.rank() != 2 || targets.dim(1) != 2 * predictions.size() || targets.dim(0) != predictions[0].dim(0)) {
    throw DimensionError("model_loss: targets " + shape_string(targets.shape()) + " do not match " +
                         std::to_string(predictions.size()) + " steps of " + shape_string(predictions[0].shape()));
  }
  return bce_loss(concat_cols(predictions), targets);
}

double model_loss(std::span<const StepPrediction> predictions, std::span<const TargetVector> targets) {
  if (predictions.size() != targets.size()) {
    throw DimensionError("model_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  }
  std::vector<double> p, t;
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    p.insert(p.end(), {predictions[j].p_death, predictions[j].p_point});
    t.insert(t.end(), {double(targets[j].died_by_now), double(targets[j].scored_clean)});
  }
  NoGradGuard guard;
  return bce_loss(Tensor::from({1, p.size()}, p), Tensor::from({1, t.size()}, t)).item();
}

std::vector<Tensor> control_tensors(std::span<const std::vector<ControlVector>> sequences) {
  if (sequences.empty()) throw ValidationError("control_tensors: no sequences");
  const std::size_t steps = sequences[0].size();
  const std::size_t batch = sequences.size();
  std::vector<Tensor> out;
  out.reserve(steps);
  for (std::size_t j = 0; j < steps; ++j) {
    std::vector<double> values(batch * 3);
    for (std::size_t b = 0; b < batch; ++b) {
      if (sequences[b].size() != steps) throw DimensionError("control_tensors: sequences differ in length");
      const auto& c = sequences[b][j];
      values[b * 3 + 0] = c.shoot;
      values[b * 3 + 1] = c.horizontal;
      values[b * 3 + 2] = c.vertical;
    }
    out.push_back(Tensor::from({batch, 3}, std::move(values)));
  }
  return out;
}

Tensor observation_tensor(std::span<const Observation> observations) {
  if (observations.empty()) throw ValidationError("observation_tensor: no observations");
  const auto& first = observations[0];
  std::vector<double> values;
  values.reserve(observations.size() * first.pixels.size());
  for (const auto& o : observations) {
    if (o.frames != first.frames || o.height != first.height || o.width != first.width) {
      throw DimensionError("observation_tensor: observations differ in shape");
    }
    values.insert(values.end(), o.pixels.begin(), o.pixels.end());
  }
  return Tensor::from({observations.size(), first.frames, first.height, first.width}, std::move(values));
}

}  // namespace prl
