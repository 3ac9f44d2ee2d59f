#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "prl/env.hpp"
#include "prl/model.hpp"

namespace prl {

using ControlSequence = std::vector<ControlVector>;

struct PlannerConfig {
  std::size_t num_sequences = 25;
  std::size_t horizon = 10;
  double min_survival = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ScoredSequence {
  ControlSequence controls;
  double p_death = 0.5;
  double p_point = 0.5;
};

/// Random candidates plus, when given, the previous best shifted one step
/// left with a fresh random control appended. Carry-over needs at least two
/// candidates; with one the planner is purely random.
std::vector<ControlSequence> sample_sequences(const PlannerConfig& config, std::span<const ControlVector> valid,
                                              const std::optional<ControlSequence>& previous_best,
                                              std::mt19937_64& rng);

/// Scores candidates from the environment's current state.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::vector<ScoredSequence> score(const Environment& env,
                                            std::span<const ControlSequence> candidates) const = 0;
};

/// Perceives once, then rolls every candidate forward from the shared latent.
/// Probabilities come from the final unroll step.
std::vector<ScoredSequence> score_sequences(const Model& model, const Observation& obs,
                                            std::span<const ControlSequence> candidates);

class ModelScorer final : public SequenceScorer {
 public:
  explicit ModelScorer(const Model& model) : model_(model) {}
  std::vector<ScoredSequence> score(const Environment& env,
                                    std::span<const ControlSequence> candidates) const override;

 private:
  const Model& model_;
};

/// Exact-simulation oracle: replays each candidate on a clone of the
/// environment and reports the realized cumulative outcome, nudged into
/// the open interval (0,1).
class SimulatorScorer final : public SequenceScorer {
 public:
  std::vector<ScoredSequence> score(const Environment& env,
                                    std::span<const ControlSequence> candidates) const override;
};

/// Highest p_point among candidates with survival >= min_survival, else the
/// lowest p_death overall. Ties go to the lowest index.
std::size_t select_index(std::span<const ScoredSequence> scored, double min_survival);
const ScoredSequence& select_sequence(std::span<const ScoredSequence> scored, double min_survival);

struct Decision {
  std::size_t candidates = 0;
  double p_death = 0.0;
  double p_point = 0.0;
  bool fallback = false;
  ControlVector control;
};

/// Random-shooting controller. Keeps the last chosen sequence for carry-over.
class Planner {
 public:
  explicit Planner(PlannerConfig config);

  ControlVector act(const Environment& env, const SequenceScorer& scorer);
  ControlVector act(const Environment& env, const Model& model) { return act(env, ModelScorer(model)); }
  /// Forget the carried sequence (call at episode start).
  void reset_episode() { previous_best_.reset(); }

  const PlannerConfig& config() const { return config_; }
  void set_min_survival(double value) { config_.min_survival = value; }
  void set_num_sequences(std::size_t value) { config_.num_sequences = value; }
  const std::optional<ControlSequence>& previous_best() const { return previous_best_; }
  const Decision& last_decision() const { return last_; }

 private:
  PlannerConfig config_;
  std::mt19937_64 rng_;
  std::optional<ControlSequence> previous_best_;
  Decision last_;
};

}  // namespace prl
