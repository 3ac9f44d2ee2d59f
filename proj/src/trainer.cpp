#include "prl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace prl {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Runs fn(worker) on `workers` threads; worker 0 runs on the caller.
void parallel_for(std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1) {
    fn(0);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        fn(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  try {
    fn(0);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Splits `total` into `parts` near-equal shares.
std::vector<std::size_t> shares(std::size_t total, std::size_t parts) {
  std::vector<std::size_t> out(parts, total / parts);
  for (std::size_t i = 0; i < total % parts; ++i) ++out[i];
  return out;
}

ControlVector random_control(std::span<const ControlVector> valid, std::mt19937_64& rng) {
  return valid[std::uniform_int_distribution<std::size_t>(0, valid.size() - 1)(rng)];
}

struct StepRecord {
  std::vector<std::uint8_t> observation;
  std::shared_ptr<const Environment> origin;
  ControlVector control;
  StepOutcome outcome;
};

// Shared episode driver; on_step sees the environment before each step.
template <typename OnStep>
int run_episode(Environment& env, Agent& agent, const EpisodePolicy& policy, std::uint64_t seed, OnStep&& on_step) {
  env.reset(seed);
  agent.begin_episode();
  std::mt19937_64 rng(derive_seed(seed, 0x6e6f6f70));
  const std::size_t noops = std::uniform_int_distribution<std::size_t>(0, policy.noop_max)(rng);
  for (std::size_t t = 0; !env.episode_over(); ++t) {
    ControlVector c{};
    if (t >= noops) {
      c = agent.act(env);
      if (policy.auto_fire && env.awaiting_launch()) c.shoot = 1;
    }
    on_step(env, c);
  }
  return env.score();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(base) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

std::size_t resolve_workers(std::size_t workers) {
  if (workers > 0) return workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

ExperimentConfig ExperimentConfig::desk() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::paper_scale() {
  ExperimentConfig c;
  c.iterations = 19;
  c.initial_cases_per_game = 400000;
  c.cases_per_game_per_iter = 200000;
  c.k_schedule = {{1, 25}, {4, 100}, {7, 200}};
  c.lr_schedule = {{1, 1e-4}, {4, 5e-5}, {7, 1e-5}};
  c.updates_per_iteration = 48000;
  c.halve_lr_after = 24000;
  c.batch_size = 100;
  c.noop_max = 30;
  c.env.height = 84;
  c.env.width = 84;
  c.env.preprocess = Preprocess::max2;
  c.env.max_steps = 2000;
  c.model = ModelConfig::paper_scale();
  c.optimizer.learning_rate = 1e-4;
  return c;
}

void ExperimentConfig::validate() const {
  if (games.empty()) throw ValidationError("games: at least one game is required");
  for (const auto& g : games) make_environment(g, env_options());
  if (iterations == 0) throw ValidationError("iterations must be positive");
  if (initial_cases_per_game == 0) throw ValidationError("initial_cases_per_game must be positive");
  if (cases_per_game_per_iter == 0) throw ValidationError("cases_per_game_per_iter must be positive");
  validate_schedule(k_schedule, "k_schedule");
  for (const auto& [_, k] : k_schedule) {
    if (k == 0) throw ValidationError("k_schedule: candidate counts must be positive");
  }
  for (const auto& [game, schedule] : survival_schedule) {
    if (std::find(games.begin(), games.end(), game) == games.end()) {
      throw ValidationError("survival_schedule." + game + ": game is not part of the experiment");
    }
    validate_schedule(schedule, "survival_schedule." + game);
    for (const auto& [_, s] : schedule) {
      if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("survival_schedule." + game + ": values must lie in [0,1]");
    }
  }
  validate_schedule(lr_schedule, "lr_schedule");
  for (const auto& [_, lr] : lr_schedule) {
    if (!(lr > 0.0)) throw ValidationError("lr_schedule: learning rates must be positive");
  }
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (!(weight_multiplier > 0.0)) throw ValidationError("weight_multiplier must be positive");
  if (weight_period == 0) throw ValidationError("weight_period must be positive");
  if (eval_episodes == 0) throw ValidationError("eval_episodes must be positive");
  model.validate();
  optimizer.validate();
}

double ExperimentConfig::min_survival(const std::string& game, std::uint32_t iteration) const {
  auto it = survival_schedule.find(game);
  if (it == survival_schedule.end()) return 1.0;
  return schedule_value(it->second, iteration);
}

EnvOptions ExperimentConfig::env_options() const {
  EnvOptions e = env;
  e.height = model.frame_height;
  e.width = model.frame_width;
  e.frame_stack = model.frame_stack;
  return e;
}

double IterationWeights::operator()(std::uint32_t iteration) const {
  const std::uint32_t steps = iteration == 0 ? 0 : (iteration - 1) / period;
  return std::pow(multiplier, static_cast<double>(steps));
}

IterationSampler::IterationSampler(const Dataset& dataset, IterationWeights weights, std::uint64_t seed)
    : dataset_(&dataset), rng_(seed) {
  if (dataset.empty()) throw ValidationError("build_sampler: dataset is empty");
  std::vector<double> mass;
  for (const auto& [tag, idx] : dataset.by_iteration()) {
    tags_.push_back(tag);
    mass.push_back(weights(tag) * static_cast<double>(idx.size()));
  }
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (double m : mass) probabilities_.push_back(m / total);
  pick_ = std::discrete_distribution<std::size_t>(mass.begin(), mass.end());
}

std::size_t IterationSampler::draw() {
  const auto& idx = dataset_->by_iteration().at(tags_[pick_(rng_)]);
  return idx[std::uniform_int_distribution<std::size_t>(0, idx.size() - 1)(rng_)];
}

std::vector<std::size_t> IterationSampler::batch(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = draw();
  return out;
}

double IterationSampler::probability(std::uint32_t iteration) const {
  auto it = std::find(tags_.begin(), tags_.end(), iteration);
  return it == tags_.end() ? 0.0 : probabilities_[static_cast<std::size_t>(it - tags_.begin())];
}

IterationSampler build_sampler(const Dataset& dataset, IterationWeights weights, std::uint64_t seed) {
  return IterationSampler(dataset, weights, seed);
}

ControlVector RandomAgent::act(const Environment& env) { return random_control(env.valid_controls(), rng_); }

ControlVector CatchOptimalAgent::act(const Environment& env) {
  const auto* game = dynamic_cast<const CatchEnv*>(&env);
  if (!game) throw ValidationError("the optimal policy is only defined for catch");
  ControlVector c{};
  if (game->object_col() < game->paddle_center()) c.horizontal = -1;
  if (game->object_col() > game->paddle_center()) c.horizontal = 1;
  return c;
}

int play_episode(Environment& env, Agent& agent, const EpisodePolicy& policy, std::uint64_t seed) {
  return run_episode(env, agent, policy, seed, [](Environment& e, const ControlVector& c) { e.step(c); });
}

ScoreStats summarize(std::vector<int> scores) {
  ScoreStats s;
  s.scores = std::move(scores);
  if (s.scores.empty()) return s;
  const double n = static_cast<double>(s.scores.size());
  s.mean = std::accumulate(s.scores.begin(), s.scores.end(), 0.0) / n;
  double ss = 0.0;
  for (int v : s.scores) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / n);
  s.min = *std::min_element(s.scores.begin(), s.scores.end());
  s.max = *std::max_element(s.scores.begin(), s.scores.end());
  return s;
}

ScoreStats evaluate(const std::string& game, const EnvOptions& env, std::size_t episodes, const AgentFactory& make_agent,
                    const EpisodePolicy& policy, std::uint64_t seed, std::size_t workers) {
  std::vector<int> scores(episodes);
  workers = std::max<std::size_t>(1, std::min(workers, episodes));
  // Every episode has its own seed and agent, so results do not depend on
  // how episodes are spread over workers.
  parallel_for(workers, [&](std::size_t w) {
    auto environment = make_environment(game, env);
    for (std::size_t e = w; e < episodes; e += workers) {
      auto agent = make_agent(w, derive_seed(seed, e, 1));
      scores[e] = play_episode(*environment, *agent, policy, derive_seed(seed, e, 2));
    }
  });
  return summarize(std::move(scores));
}

std::vector<TrainingCase> generate_data(const std::string& game, const EnvOptions& env, const AgentFactory& make_agent,
                                        const GenerationConfig& config) {
  if (config.horizon == 0) throw ValidationError("generate_data: horizon must be positive");
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, std::max<std::size_t>(config.count, 1)));
  const auto quota = shares(config.count, workers);
  std::vector<std::vector<TrainingCase>> produced(workers);

  parallel_for(workers, [&](std::size_t w) {
    auto environment = make_environment(game, env);
    auto& out = produced[w];
    out.reserve(quota[w]);
    std::mt19937_64 pad_rng(derive_seed(config.seed, w, 0x706164));
    const auto valid = environment->valid_controls();
    for (std::uint64_t episode = 0; out.size() < quota[w]; ++episode) {
      auto agent = make_agent(w, derive_seed(config.seed, w, 2 * episode + 1));
      std::vector<StepRecord> steps;
      run_episode(*environment, *agent, config.policy, derive_seed(config.seed, w, 2 * episode + 2),
                  [&](Environment& e, const ControlVector& c) {
                    StepRecord rec;
                    const auto obs = e.observe();
                    rec.observation.resize(obs.pixels.size());
                    std::transform(obs.pixels.begin(), obs.pixels.end(), rec.observation.begin(), quantize_pixel);
                    if (config.keep_origin) rec.origin = e.clone();
                    rec.control = c;
                    rec.outcome = e.step(c);
                    rec.outcome.frame = {};
                    steps.push_back(std::move(rec));
                  });
      const bool truncated = !steps.empty() && steps.back().outcome.truncated;
      for (std::size_t i = 0; i < steps.size() && out.size() < quota[w]; ++i) {
        const bool complete = i + config.horizon <= steps.size();
        if (!complete && truncated) break;
        TrainingCase tc;
        tc.observation = steps[i].observation;
        tc.iteration = config.iteration_tag;
        tc.game_id = config.game_id;
        tc.origin = steps[i].origin;
        std::vector<StepOutcome> outcomes;
        for (std::size_t j = i; j < i + config.horizon; ++j) {
          if (j < steps.size()) {
            tc.controls.push_back(steps[j].control);
            outcomes.push_back(steps[j].outcome);
          } else {
            // Past a terminal step nothing changes.
            tc.controls.push_back(random_control(valid, pad_rng));
            outcomes.emplace_back();
          }
        }
        tc.targets = build_targets(outcomes);
        out.push_back(std::move(tc));
      }
    }
  });

  std::vector<TrainingCase> cases;
  cases.reserve(config.count);
  for (auto& part : produced) std::move(part.begin(), part.end(), std::back_inserter(cases));
  return cases;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  const auto& h = dataset.header();
  const std::size_t n = indices.size();
  const std::size_t k = h.horizon;
  std::vector<double> frames(n * h.pixels());
  std::vector<std::vector<double>> controls(k, std::vector<double>(n * 3));
  std::vector<double> targets(n * 2 * k);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& c = dataset[indices[b]];
    std::transform(c.observation.begin(), c.observation.end(), frames.begin() + static_cast<std::ptrdiff_t>(b * h.pixels()),
                   dequantize_pixel);
    for (std::size_t j = 0; j < k; ++j) {
      controls[j][b * 3 + 0] = c.controls[j].shoot;
      controls[j][b * 3 + 1] = c.controls[j].horizontal;
      controls[j][b * 3 + 2] = c.controls[j].vertical;
      targets[b * 2 * k + 2 * j] = c.targets[j].died_by_now;
      targets[b * 2 * k + 2 * j + 1] = c.targets[j].scored_clean;
    }
  }
  Batch batch;
  batch.frames = Tensor::from({n, h.frames, h.height, h.width}, std::move(frames));
  for (auto& c : controls) batch.controls.push_back(Tensor::from({n, 3}, std::move(c)));
  batch.targets = Tensor::from({n, 2 * k}, std::move(targets));
  return batch;
}

TrainingMetrics train_iteration(Model& model, const Dataset& dataset, IterationSampler& sampler,
                                const ExperimentConfig& config, std::uint32_t iteration) {
  TrainingMetrics metrics;
  const double base_lr = schedule_value(config.lr_schedule, iteration);
  OptimizerConfig opt = config.optimizer;
  const auto params = model.parameters();
  double loss_sum = 0.0, death_hits = 0.0, point_hits = 0.0, cells = 0.0;
  for (std::size_t u = 0; u < config.updates_per_iteration; ++u) {
    opt.learning_rate = u >= config.halve_lr_after ? base_lr / 2.0 : base_lr;
    const auto indices = sampler.batch(config.batch_size);
    const Batch batch = make_batch(dataset, indices);
    const auto predictions = model.rollout_training(batch.frames, batch.controls);
    const Tensor loss = model_loss(predictions, batch.targets);
    if (!std::isfinite(loss.item())) {
      throw TrainingAborted("non-finite loss " + std::to_string(loss.item()) + " at iteration " +
                            std::to_string(iteration) + ", update " + std::to_string(u) + " (learning rate " +
                            std::to_string(opt.learning_rate) + ")");
    }
    model.zero_grad();
    loss.backward();
    adam_step(params, opt);

    loss_sum += loss.item();
    const auto t = batch.targets.data();
    const std::size_t k = predictions.size();
    for (std::size_t j = 0; j < k; ++j) {
      const auto p = predictions[j].data();
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        death_hits += (p[2 * b] > 0.5) == (t[b * 2 * k + 2 * j] > 0.5);
        point_hits += (p[2 * b + 1] > 0.5) == (t[b * 2 * k + 2 * j + 1] > 0.5);
      }
    }
    cells += static_cast<double>(k * config.batch_size);
    ++metrics.updates;
  }
  if (metrics.updates > 0) {
    metrics.mean_loss = loss_sum / static_cast<double>(metrics.updates);
    metrics.death_accuracy = death_hits / cells;
    metrics.point_accuracy = point_hits / cells;
  }
  return metrics;
}

std::vector<IterationRecord> ExperimentReport::for_game(const std::string& game) const {
  std::vector<IterationRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const IterationRecord& r) { return r.game == game; });
  return out;
}

std::string record_to_json(const IterationRecord& record) {
  nlohmann::json j;
  j["iteration"] = record.iteration;
  j["game"] = record.game;
  j["mean_score"] = record.mean_score;
  j["mean_loss"] = record.mean_loss ? nlohmann::json(*record.mean_loss) : nlohmann::json(nullptr);
  j["dataset_size"] = record.dataset_size;
  return j.dump();
}

std::optional<IterationRecord> record_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    IterationRecord r;
    r.iteration = j.at("iteration").get<std::uint32_t>();
    r.game = j.at("game").get<std::string>();
    r.mean_score = j.at("mean_score").get<double>();
    if (!j.at("mean_loss").is_null()) r.mean_loss = j.at("mean_loss").get<double>();
    r.dataset_size = j.at("dataset_size").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

std::vector<IterationRecord> read_report(const std::filesystem::path& path, std::ostream* warnings) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  std::vector<IterationRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    if (auto r = record_from_json(line)) {
      out.push_back(std::move(*r));
    } else if (warnings) {
      *warnings << "warning: " << path.string() << ":" << n << ": skipping malformed record\n";
    }
  }
  return out;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const IterationRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,game,mean_score,mean_loss,dataset_size\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.iteration << ',' << r.game << ',' << r.mean_score << ',';
    if (r.mean_loss) out << *r.mean_loss;
    out << ',' << r.dataset_size << '\n';
  }
}

namespace {

class RunWriter {
 public:
  explicit RunWriter(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
    if (dir_) std::filesystem::create_directories(*dir_);
  }

  bool active() const { return dir_.has_value(); }
  std::filesystem::path path(const std::string& name) const { return *dir_ / name; }

  void reset_report(std::span<const IterationRecord> records) {
    if (!dir_) return;
    std::ofstream out(path("report.jsonl"), std::ios::trunc);
    for (const auto& r : records) out << record_to_json(r) << '\n';
    write_scores_csv(path("scores.csv"), records);
  }

  void append_records(std::span<const IterationRecord> fresh, std::span<const IterationRecord> all) {
    if (!dir_) return;
    std::ofstream out(path("report.jsonl"), std::ios::app);
    for (const auto& r : fresh) out << record_to_json(r) << '\n';
    out.flush();
    write_scores_csv(path("scores.csv"), all);
  }

  void reset_dataset(const Dataset& dataset) {
    if (!dir_) return;
    create_dataset_file(path("dataset.prld"), dataset.header());
    append_cases(path("dataset.prld"), dataset.cases());
  }

  void append_dataset(std::span<const TrainingCase> cases) {
    if (dir_) append_cases(path("dataset.prld"), cases);
  }

  void checkpoint(const Model& model, const ExperimentCursor& cursor) {
    if (!dir_) return;
    save_checkpoint(path("checkpoint_iter" + std::to_string(cursor.iteration) + ".prlm"), model, cursor);
    save_checkpoint(path("checkpoint_latest.prlm"), model, cursor);
  }

 private:
  std::optional<std::filesystem::path> dir_;
};

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const EnvOptions env = config.env_options();
  const IterationWeights weights{config.weight_multiplier, config.weight_period};
  const std::size_t horizon = config.model.unroll;
  const std::size_t workers = resolve_workers(config.workers);

  DatasetHeader header;
  header.frames = static_cast<std::uint32_t>(config.model.frame_stack);
  header.height = static_cast<std::uint32_t>(config.model.frame_height);
  header.width = static_cast<std::uint32_t>(config.model.frame_width);
  header.horizon = static_cast<std::uint32_t>(horizon);
  header.games = config.games;

  ExperimentReport report;
  RunWriter writer(options.out_dir);
  std::mt19937_64 master(config.seed);
  Model model(config.model, derive_seed(config.seed, 0x6d6f64656c));
  Dataset dataset(header);
  std::uint32_t first_iteration = 1;

  auto emit = [&](std::vector<IterationRecord> fresh) {
    report.records.insert(report.records.end(), fresh.begin(), fresh.end());
    writer.append_records(fresh, report.records);
    if (options.on_record) {
      for (const auto& r : fresh) options.on_record(r);
    }
  };

  auto generate = [&](const AgentFactory& make_agent, std::size_t count, std::uint32_t tag, std::uint64_t seed) {
    std::vector<TrainingCase> all;
    for (std::size_t g = 0; g < config.games.size(); ++g) {
      GenerationConfig gen;
      gen.count = count;
      gen.horizon = horizon;
      gen.iteration_tag = tag;
      gen.game_id = static_cast<std::uint16_t>(g);
      gen.policy = {config.noop_max, config.auto_fire};
      gen.seed = derive_seed(seed, g, 0x67656e);
      gen.workers = workers;
      auto cases = generate_data(config.games[g], env, make_agent, gen);
      std::move(cases.begin(), cases.end(), std::back_inserter(all));
    }
    for (auto& c : all) dataset.append(c);
    writer.append_dataset(all);
  };

  auto planner_factory = [&](std::shared_ptr<const SequenceScorer> scorer, const std::string& game,
                             std::uint32_t iteration) -> AgentFactory {
    PlannerConfig pc;
    pc.num_sequences = schedule_value(config.k_schedule, iteration);
    pc.horizon = horizon;
    pc.min_survival = config.min_survival(game, iteration);
    return [pc, scorer](std::size_t, std::uint64_t seed) {
      PlannerConfig c = pc;
      c.seed = seed;
      return std::make_unique<PlannerAgent>(c, scorer);
    };
  };
  const AgentFactory random_factory = [](std::size_t, std::uint64_t seed) { return std::make_unique<RandomAgent>(seed); };
  const EpisodePolicy policy{config.noop_max, config.auto_fire};

  if (options.resume_from) {
    const auto run_dir = options.resume_from->parent_path();
    auto ckpt = load_checkpoint(*options.resume_from, config.model);
    model = std::move(ckpt.model);
    std::istringstream(ckpt.cursor.rng_state) >> master;
    dataset = load_dataset(run_dir / "dataset.prld");
    if (!(dataset.header() == header)) throw IncompatibleError("resume: dataset layout differs from the configuration");
    if (dataset.size() < ckpt.cursor.dataset_size) throw FormatError("resume: dataset is shorter than the checkpoint cursor");
    dataset.truncate(ckpt.cursor.dataset_size);
    for (auto& r : read_report(run_dir / "report.jsonl")) {
      if (r.iteration <= ckpt.cursor.iteration) report.records.push_back(std::move(r));
    }
    first_iteration = ckpt.cursor.iteration + 1;
    writer.reset_dataset(dataset);
    writer.reset_report(report.records);
  } else {
    writer.reset_report({});
    if (writer.active()) create_dataset_file(writer.path("dataset.prld"), header);
    const std::uint64_t base = master();
    generate(random_factory, config.initial_cases_per_game, 1, base);
    std::vector<IterationRecord> fresh;
    for (std::size_t g = 0; g < config.games.size(); ++g) {
      const auto stats = evaluate(config.games[g], env, config.eval_episodes, random_factory, policy,
                                  derive_seed(base, g, 0x6576616c), workers);
      fresh.push_back({0, config.games[g], stats.mean, std::nullopt, dataset.size()});
    }
    emit(std::move(fresh));
    writer.checkpoint(model, {0, dataset.size(), rng_state(master)});
  }

  const std::uint32_t last = options.stop_after ? std::min(*options.stop_after, config.iterations) : config.iterations;
  for (std::uint32_t it = first_iteration; it <= last; ++it) {
    const std::uint64_t base = master();
    auto sampler = build_sampler(dataset, weights, derive_seed(base, 0x73616d70));
    const auto metrics = train_iteration(model, dataset, sampler, config, it);
    report.training.push_back(metrics);

    const auto snapshot = std::make_shared<const Model>(model);
    const auto scorer = std::make_shared<const ModelScorer>(*snapshot);
    std::vector<IterationRecord> fresh;
    for (std::size_t g = 0; g < config.games.size(); ++g) {
      const auto stats = evaluate(config.games[g], env, config.eval_episodes, planner_factory(scorer, config.games[g], it),
                                  policy, derive_seed(base, g, 0x6576616c), workers);
      fresh.push_back({it, config.games[g], stats.mean,
                       metrics.updates ? std::optional<double>(metrics.mean_loss) : std::nullopt, 0});
    }
    // Data for the next iteration comes from the freshly trained model.
    for (std::size_t g = 0; g < config.games.size(); ++g) {
      GenerationConfig gen;
      gen.count = config.cases_per_game_per_iter;
      gen.horizon = horizon;
      gen.iteration_tag = it + 1;
      gen.game_id = static_cast<std::uint16_t>(g);
      gen.policy = policy;
      gen.seed = derive_seed(base, g, 0x67656e);
      gen.workers = workers;
      const auto cases = generate_data(config.games[g], env, planner_factory(scorer, config.games[g], it + 1), gen);
      for (const auto& c : cases) dataset.append(c);
      writer.append_dataset(cases);
    }
    for (auto& r : fresh) r.dataset_size = dataset.size();
    emit(std::move(fresh));
    writer.checkpoint(model, {it, dataset.size(), rng_state(master)});
  }
  return report;
}

}  // namespace prl
