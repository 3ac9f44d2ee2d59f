#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prl/env.hpp"
#include "prl/model.hpp"
#include "prl/optim.hpp"
#include "prl/planner.hpp"
#include "prl/store.hpp"

namespace prl {

/// Piecewise-constant value keyed by the iteration it takes effect at.
template <typename T>
using Schedule = std::vector<std::pair<std::uint32_t, T>>;

template <typename T>
T schedule_value(const Schedule<T>& schedule, std::uint32_t iteration) {
  if (schedule.empty()) throw ValidationError("empty schedule");
  T value = schedule.front().second;
  for (const auto& [from, v] : schedule) {
    if (from <= iteration) value = v;
  }
  return value;
}

template <typename T>
void validate_schedule(const Schedule<T>& schedule, const std::string& name) {
  if (schedule.empty() || schedule.front().first != 1) {
    throw ValidationError(name + ": schedule must start at iteration 1");
  }
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (schedule[i].first <= schedule[i - 1].first) throw ValidationError(name + ": schedule must be sorted by iteration");
  }
}

struct ExperimentConfig {
  std::vector<std::string> games{"catch", "mini-breakout"};
  std::uint32_t iterations = 10;
  std::size_t initial_cases_per_game = 4000;
  std::size_t cases_per_game_per_iter = 2000;
  /// Candidate sequences considered per decision.
  Schedule<std::size_t> k_schedule{{1, 25}};
  /// Per game; games without an entry play the safest option (1.0).
  std::map<std::string, Schedule<double>> survival_schedule;
  Schedule<double> lr_schedule{{1, 1e-3}};
  std::size_t updates_per_iteration = 2000;
  std::size_t halve_lr_after = 1000;
  std::size_t batch_size = 32;
  double weight_multiplier = 3.0;
  std::uint32_t weight_period = 3;
  std::size_t noop_max = 4;
  bool auto_fire = true;
  std::size_t eval_episodes = 100;
  /// 0 = all available cores.
  std::size_t workers = 0;
  std::uint64_t seed = 1;
  /// Frame size and stack depth are taken from `model`.
  EnvOptions env;
  ModelConfig model;
  OptimizerConfig optimizer;

  static ExperimentConfig desk();
  static ExperimentConfig paper_scale();

  void validate() const;
  double min_survival(const std::string& game, std::uint32_t iteration) const;
  EnvOptions env_options() const;
};

/// Sampling weight per iteration tag: multiplier^floor((i-1)/period).
struct IterationWeights {
  double multiplier = 3.0;
  std::uint32_t period = 3;

  double operator()(std::uint32_t iteration) const;
};

/// Draws dataset indices: an iteration with probability proportional to
/// weight * count, then a case uniformly within it. With replacement.
class IterationSampler {
 public:
  IterationSampler(const Dataset& dataset, IterationWeights weights, std::uint64_t seed);

  std::size_t draw();
  std::vector<std::size_t> batch(std::size_t n);
  double probability(std::uint32_t iteration) const;
  std::uint32_t iteration_of(std::size_t index) const { return (*dataset_)[index].iteration; }

 private:
  const Dataset* dataset_;
  std::vector<std::uint32_t> tags_;
  std::vector<double> probabilities_;
  std::discrete_distribution<std::size_t> pick_;
  std::mt19937_64 rng_;
};

IterationSampler build_sampler(const Dataset& dataset, IterationWeights weights, std::uint64_t seed);

// --- acting --------------------------------------------------------------

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin_episode() {}
  virtual ControlVector act(const Environment& env) = 0;
};

class RandomAgent final : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed) : rng_(seed) {}
  ControlVector act(const Environment& env) override;

 private:
  std::mt19937_64 rng_;
};

class PlannerAgent final : public Agent {
 public:
  PlannerAgent(PlannerConfig config, std::shared_ptr<const SequenceScorer> scorer)
      : planner_(std::move(config)), scorer_(std::move(scorer)) {}
  void begin_episode() override { planner_.reset_episode(); }
  ControlVector act(const Environment& env) override { return planner_.act(env, *scorer_); }
  const Planner& planner() const { return planner_; }

 private:
  Planner planner_;
  std::shared_ptr<const SequenceScorer> scorer_;
};

/// Catch only: steer the paddle toward the object's column.
class CatchOptimalAgent final : public Agent {
 public:
  ControlVector act(const Environment& env) override;
};

struct EpisodePolicy {
  std::size_t noop_max = 0;
  bool auto_fire = true;
};

/// Plays one episode from `seed`: n ~ U[0, noop_max] no-op steps, then the
/// agent. With auto_fire, shoot is forced while the game awaits launch.
/// Returns the episode score.
int play_episode(Environment& env, Agent& agent, const EpisodePolicy& policy, std::uint64_t seed);

struct ScoreStats {
  std::vector<int> scores;
  double mean = 0.0;
  double stddev = 0.0;
  int min = 0;
  int max = 0;
};

ScoreStats summarize(std::vector<int> scores);

/// Builds a fresh agent for worker `w`.
using AgentFactory = std::function<std::unique_ptr<Agent>(std::size_t worker, std::uint64_t seed)>;

ScoreStats evaluate(const std::string& game, const EnvOptions& env, std::size_t episodes, const AgentFactory& make_agent,
                    const EpisodePolicy& policy, std::uint64_t seed, std::size_t workers = 1);

// --- data ------------------------------------------------------------------

struct GenerationConfig {
  std::size_t count = 0;
  std::size_t horizon = 10;
  std::uint32_t iteration_tag = 1;
  std::uint16_t game_id = 0;
  EpisodePolicy policy;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Keep a copy of the environment at each window start.
  bool keep_origin = false;
};

/// Plays episodes and cuts them into (observation, next-k controls, next-k
/// targets) windows. A window that runs past a terminal step is completed
/// with random controls and unchanged cumulative targets; one cut short by
/// the step limit is dropped.
std::vector<TrainingCase> generate_data(const std::string& game, const EnvOptions& env, const AgentFactory& make_agent,
                                        const GenerationConfig& config);

// --- training --------------------------------------------------------------

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingMetrics {
  std::size_t updates = 0;
  double mean_loss = 0.0;
  double death_accuracy = 0.0;
  double point_accuracy = 0.0;
};

struct Batch {
  Tensor frames;
  std::vector<Tensor> controls;
  Tensor targets;
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

TrainingMetrics train_iteration(Model& model, const Dataset& dataset, IterationSampler& sampler,
                                const ExperimentConfig& config, std::uint32_t iteration);

// --- experiment ------------------------------------------------------------

struct IterationRecord {
  std::uint32_t iteration = 0;
  std::string game;
  double mean_score = 0.0;
  std::optional<double> mean_loss;
  std::uint64_t dataset_size = 0;

  bool operator==(const IterationRecord&) const = default;
};

struct ExperimentReport {
  std::vector<IterationRecord> records;
  std::vector<TrainingMetrics> training;

  std::vector<IterationRecord> for_game(const std::string& game) const;
};

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this iteration even if the config asks for more.
  std::optional<std::uint32_t> stop_after;
  std::function<void(const IterationRecord&)> on_record;
};

ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::string record_to_json(const IterationRecord& record);
std::optional<IterationRecord> record_from_json(const std::string& line);
std::vector<IterationRecord> read_report(const std::filesystem::path& path, std::ostream* warnings = nullptr);
void write_scores_csv(const std::filesystem::path& path, std::span<const IterationRecord> records);

/// Maps 0 to the number of available cores.
std::size_t resolve_workers(std::size_t workers);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace prl
