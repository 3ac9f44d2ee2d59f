// prl: train, play, baseline and export-metrics commands.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "prl/config.hpp"
#include "prl/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> seed_or_env(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("PRL_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("PRL_SEED: not an unsigned integer: '") + env + "'");
  }
  return std::nullopt;
}

void print_stats_csv(std::ostream& out, const std::string& env, const std::string& policy, const prl::ScoreStats& s) {
  out << "env,policy,episodes,mean,std,min,max\n";
  out << std::setprecision(10) << env << ',' << policy << ',' << s.scores.size() << ',' << s.mean << ',' << s.stddev
      << ',' << s.min << ',' << s.max << '\n';
}

void write_scores(const fs::path& dir, const std::string& name, const std::string& env, const std::string& policy,
                  const prl::ScoreStats& s) {
  fs::create_directories(dir);
  std::ofstream summary(dir / (name + ".csv"));
  print_stats_csv(summary, env, policy, s);
  std::ofstream episodes(dir / (name + "_episodes.csv"));
  episodes << "episode,score\n";
  for (std::size_t i = 0; i < s.scores.size(); ++i) episodes << i << ',' << s.scores[i] << '\n';
}

struct TrainArgs {
  std::optional<std::string> config;
  std::optional<std::string> preset;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> resume;
  std::optional<std::size_t> workers;
};

int cmd_train(const TrainArgs& a) {
  prl::ExperimentConfig config;
  std::optional<fs::path> resume;
  if (a.resume) {
    resume = fs::path(*a.resume);
    if (!fs::exists(*resume)) throw UsageError("--resume: no such checkpoint " + resume->string());
  }
  if (a.config) {
    if (!fs::exists(*a.config)) throw UsageError("--config: no such file " + *a.config);
    config = prl::load_config_file(*a.config);
  } else if (a.preset) {
    config = prl::preset_config(*a.preset);
  } else if (resume && fs::exists(resume->parent_path() / "config.txt")) {
    config = prl::load_config_file(resume->parent_path() / "config.txt");
  } else {
    config = prl::ExperimentConfig::desk();
  }
  if (auto seed = seed_or_env(a.seed)) config.seed = *seed;
  if (a.workers) config.workers = *a.workers;
  config.validate();

  fs::path out;
  if (a.out) {
    out = *a.out;
  } else if (resume) {
    out = resume->parent_path();
  } else {
    throw UsageError("--out is required");
  }
  fs::create_directories(out);
  {
    std::ofstream echo(out / "config.txt");
    echo << prl::format_config(config);
  }

  prl::RunOptions options;
  options.out_dir = out;
  options.resume_from = resume;
  options.on_record = [](const prl::IterationRecord& r) { std::cout << prl::record_to_json(r) << std::endl; };
  prl::run_experiment(config, options);
  return kOk;
}

struct PlayArgs {
  std::string checkpoint;
  std::string env;
  std::size_t episodes = 100;
  std::size_t candidates = 25;
  double min_survival = 1.0;
  std::size_t noop_max = 4;
  std::string preprocess = "identity";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

int cmd_play(const PlayArgs& a) {
  if (a.episodes == 0) throw UsageError("--episodes must be positive");
  if (a.candidates == 0) throw UsageError("--candidates must be positive");
  if (!(a.min_survival >= 0.0 && a.min_survival <= 1.0)) throw UsageError("--min-survival must lie in [0,1]");
  std::optional<prl::Checkpoint> ckpt;
  try {
    ckpt.emplace(prl::load_checkpoint(a.checkpoint));
  } catch (const prl::FormatError& e) {
    throw UsageError(std::string("--checkpoint: ") + e.what());
  } catch (const prl::IncompatibleError& e) {
    throw UsageError(std::string("--checkpoint: ") + e.what());
  }
  const auto& mc = ckpt->model.config();
  prl::EnvOptions env;
  env.frame_stack = mc.frame_stack;
  env.height = mc.frame_height;
  env.width = mc.frame_width;
  env.preprocess = a.preprocess == "max2" ? prl::Preprocess::max2 : prl::Preprocess::identity;
  prl::make_environment(a.env, env);  // rejects unknown names and bad geometry

  const auto scorer = std::make_shared<const prl::ModelScorer>(ckpt->model);
  prl::PlannerConfig pc;
  pc.num_sequences = a.candidates;
  pc.horizon = mc.unroll;
  pc.min_survival = a.min_survival;
  const prl::AgentFactory factory = [pc, scorer](std::size_t, std::uint64_t seed) {
    prl::PlannerConfig c = pc;
    c.seed = seed;
    return std::make_unique<prl::PlannerAgent>(c, scorer);
  };
  const auto seed = seed_or_env(a.seed).value_or(1);
  const auto stats = prl::evaluate(a.env, env, a.episodes, factory, {a.noop_max, true}, seed,
                                   prl::resolve_workers(a.workers.value_or(0)));
  print_stats_csv(std::cout, a.env, "planner", stats);
  if (a.out) write_scores(*a.out, "play", a.env, "planner", stats);
  return kOk;
}

struct BaselineArgs {
  std::string env;
  std::size_t episodes = 100;
  std::string policy = "random";
  std::size_t noop_max = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

int cmd_baseline(const BaselineArgs& a) {
  if (a.episodes == 0) throw UsageError("--episodes must be positive");
  prl::EnvOptions env;
  env.height = a.height;
  env.width = a.width;
  prl::make_environment(a.env, env);
  prl::AgentFactory factory;
  if (a.policy == "random") {
    factory = [](std::size_t, std::uint64_t seed) { return std::make_unique<prl::RandomAgent>(seed); };
  } else {
    if (a.env != "catch") throw UsageError("--policy optimal is only defined for catch");
    factory = [](std::size_t, std::uint64_t) { return std::make_unique<prl::CatchOptimalAgent>(); };
  }
  const auto seed = seed_or_env(a.seed).value_or(1);
  const auto stats = prl::evaluate(a.env, env, a.episodes, factory, {a.noop_max, true}, seed,
                                   prl::resolve_workers(a.workers.value_or(0)));
  print_stats_csv(std::cout, a.env, a.policy, stats);
  if (a.out) write_scores(*a.out, "baseline_" + a.policy, a.env, a.policy, stats);
  return kOk;
}

int cmd_export_metrics(const std::string& run) {
  const fs::path report = fs::path(run) / "report.jsonl";
  if (!fs::exists(report)) throw UsageError("--run: no report.jsonl in " + run);
  const auto records = prl::read_report(report, &std::cerr);
  std::map<std::string, std::vector<prl::IterationRecord>> by_game;
  for (const auto& r : records) {
    if (r.iteration > 0) by_game[r.game].push_back(r);
  }
  if (by_game.empty()) throw UsageError("--run: no training iterations recorded in " + report.string());
  for (const auto& [game, rows] : by_game) {
    const fs::path path = fs::path(run) / ("metrics_" + game + ".csv");
    std::ofstream out(path);
    out << "iteration,mean_score,loss\n" << std::setprecision(17);
    for (const auto& r : rows) {
      out << r.iteration << ',' << r.mean_score << ',';
      if (r.mean_loss) out << *r.mean_loss;
      out << '\n';
    }
    std::cout << path.string() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive reinforcement learning on small grid games"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run an experiment");
  auto* cfg_opt = t->add_option("--config", train.config, "Config file (key = value lines)");
  t->add_option("--preset", train.preset, "Preset: desk or paper-scale")->excludes(cfg_opt);
  t->add_option("--out", train.out, "Run directory (defaults to the checkpoint's directory when resuming)");
  t->add_option("--seed", train.seed, "Master seed (falls back to PRL_SEED, then the config)");
  t->add_option("--resume", train.resume, "Checkpoint to continue from");
  t->add_option("--workers", train.workers, "Worker threads, 0 = all cores; 1 is fully serial");

  PlayArgs play;
  auto* p = app.add_subcommand("play", "Play episodes with a trained model and the planner");
  p->add_option("--checkpoint", play.checkpoint, "Checkpoint file")->required();
  p->add_option("--env", play.env, "Game: catch or mini-breakout")->required();
  p->add_option("--episodes", play.episodes, "Episodes to play")->capture_default_str();
  p->add_option("--candidates", play.candidates, "Candidate sequences per decision")->capture_default_str();
  p->add_option("--min-survival", play.min_survival, "Survival threshold in [0,1]")->capture_default_str();
  p->add_option("--noop-max", play.noop_max, "Random no-op steps at episode start, at most")->capture_default_str();
  p->add_option("--preprocess", play.preprocess, "Frame preprocessing")
      ->check(CLI::IsMember({"identity", "max2"}))
      ->capture_default_str();
  p->add_option("--seed", play.seed, "Seed (falls back to PRL_SEED, then 1)");
  p->add_option("--workers", play.workers, "Worker threads, 0 = all cores");
  p->add_option("--out", play.out, "Directory for summary and per-episode CSVs");

  BaselineArgs base;
  auto* b = app.add_subcommand("baseline", "Score a reference policy");
  b->add_option("--env", base.env, "Game: catch or mini-breakout")->required();
  b->add_option("--episodes", base.episodes, "Episodes to play")->capture_default_str();
  b->add_option("--policy", base.policy, "random or optimal (catch only)")
      ->check(CLI::IsMember({"random", "optimal"}))
      ->capture_default_str();
  b->add_option("--noop-max", base.noop_max, "Random no-op steps at episode start, at most")->capture_default_str();
  b->add_option("--height", base.height, "Frame height")->capture_default_str();
  b->add_option("--width", base.width, "Frame width")->capture_default_str();
  b->add_option("--seed", base.seed, "Seed (falls back to PRL_SEED, then 1)");
  b->add_option("--workers", base.workers, "Worker threads, 0 = all cores");
  b->add_option("--out", base.out, "Directory for summary and per-episode CSVs");

  std::string run_dir, format = "csv";
  auto* e = app.add_subcommand("export-metrics", "Write one CSV per game from a run's report");
  e->add_option("--run", run_dir, "Run directory")->required();
  e->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (*t) return cmd_train(train);
    if (*p) return cmd_play(play);
    if (*b) return cmd_baseline(base);
    if (*e) return cmd_export_metrics(run_dir);
  } catch (const prl::ConfigError& err) {
    std::cerr << "error: invalid config: " << err.what() << '\n';
    return kUsage;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const prl::ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const prl::IncompatibleError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
