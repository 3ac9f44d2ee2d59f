#include "prl/planner.hpp"

#include <algorithm>

namespace prl {

namespace {

constexpr double kOracleMargin = 1e-6;

ControlVector draw(std::span<const ControlVector> valid, std::mt19937_64& rng) {
  return valid[std::uniform_int_distribution<std::size_t>(0, valid.size() - 1)(rng)];
}

}  // namespace

void PlannerConfig::validate() const {
  if (num_sequences == 0) throw ValidationError("num_sequences must be positive");
  if (horizon == 0) throw ValidationError("horizon must be positive");
  if (!(min_survival >= 0.0 && min_survival <= 1.0)) throw ValidationError("min_survival must lie in [0,1]");
}

std::vector<ControlSequence> sample_sequences(const PlannerConfig& config, std::span<const ControlVector> valid,
                                              const std::optional<ControlSequence>& previous_best,
                                              std::mt19937_64& rng) {
  if (valid.empty()) throw ValidationError("sample_sequences: empty control set");
  const bool carry = previous_best && config.num_sequences >= 2;
  const std::size_t fresh = carry ? config.num_sequences - 1 : config.num_sequences;
  std::vector<ControlSequence> out;
  out.reserve(config.num_sequences);
  for (std::size_t s = 0; s < fresh; ++s) {
    ControlSequence seq(config.horizon);
    for (auto& c : seq) c = draw(valid, rng);
    out.push_back(std::move(seq));
  }
  if (carry) {
    ControlSequence seq;
    seq.reserve(config.horizon);
    for (std::size_t j = 1; j < previous_best->size() && seq.size() + 1 < config.horizon; ++j) {
      seq.push_back((*previous_best)[j]);
    }
    while (seq.size() < config.horizon) seq.push_back(draw(valid, rng));
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<ScoredSequence> score_sequences(const Model& model, const Observation& obs,
                                            std::span<const ControlSequence> candidates) {
  if (candidates.empty()) return {};
  NoGradGuard guard;
  const Observation batch[] = {obs};
  const Tensor h0 = model.perceive(observation_tensor(batch));
  const std::size_t d = h0.numel();
  std::vector<double> repeated;
  repeated.reserve(candidates.size() * d);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    repeated.insert(repeated.end(), h0.data().begin(), h0.data().end());
  }
  const Tensor h = Tensor::from({candidates.size(), d}, std::move(repeated));
  const auto preds = model.rollout_from(h, control_tensors(candidates));
  const Tensor& last = preds.back();
  std::vector<ScoredSequence> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.push_back({candidates[i], last[2 * i], last[2 * i + 1]});
  }
  return out;
}

std::vector<ScoredSequence> ModelScorer::score(const Environment& env,
                                               std::span<const ControlSequence> candidates) const {
  return score_sequences(model_, env.observe(), candidates);
}

std::vector<ScoredSequence> SimulatorScorer::score(const Environment& env,
                                                   std::span<const ControlSequence> candidates) const {
  std::vector<ScoredSequence> out;
  out.reserve(candidates.size());
  for (const auto& seq : candidates) {
    auto sim = env.clone();
    bool died = false, scored = false;
    for (const auto& c : seq) {
      if (sim->episode_over()) break;
      const auto o = sim->step(c);
      died = died || o.died;
      scored = scored || o.scored;
    }
    const bool point = scored && !died;
    out.push_back({seq, died ? 1.0 - kOracleMargin : kOracleMargin, point ? 1.0 - kOracleMargin : kOracleMargin});
  }
  return out;
}

std::size_t select_index(std::span<const ScoredSequence> scored, double min_survival) {
  if (scored.empty()) throw ValidationError("select_sequence: no candidates");
  std::optional<std::size_t> best_point;
  std::size_t safest = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].p_death < scored[safest].p_death) safest = i;
    if (1.0 - scored[i].p_death >= min_survival && (!best_point || scored[i].p_point > scored[*best_point].p_point)) {
      best_point = i;
    }
  }
  return best_point.value_or(safest);
}

const ScoredSequence& select_sequence(std::span<const ScoredSequence> scored, double min_survival) {
  return scored[select_index(scored, min_survival)];
}

Planner::Planner(PlannerConfig config) : config_(std::move(config)), rng_(config_.seed) { config_.validate(); }

ControlVector Planner::act(const Environment& env, const SequenceScorer& scorer) {
  if (env.episode_over()) throw StateError("act() on a finished episode");
  const auto candidates = sample_sequences(config_, env.valid_controls(), previous_best_, rng_);
  const auto scored = scorer.score(env, candidates);
  const std::size_t idx = select_index(scored, config_.min_survival);
  const auto& chosen = scored[idx];
  last_.candidates = scored.size();
  last_.p_death = chosen.p_death;
  last_.p_point = chosen.p_point;
  last_.fallback = 1.0 - chosen.p_death < config_.min_survival;
  last_.control = chosen.controls.front();
  previous_best_ = chosen.controls;
  return last_.control;
}

}  // namespace prl
