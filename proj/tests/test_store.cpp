#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "prl/errors.hpp"
#include "prl/store.hpp"

using namespace prl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "prl_test_store";
  fs::create_directories(dir);
  return dir / name;
}

DatasetHeader small_header() {
  DatasetHeader h;
  h.frames = 2;
  h.height = 4;
  h.width = 5;
  h.horizon = 3;
  h.games = {"catch", "mini-breakout"};
  return h;
}

TrainingCase random_case(const DatasetHeader& h, std::mt19937_64& rng) {
  TrainingCase c;
  c.observation.resize(h.pixels());
  for (auto& p : c.observation) p = static_cast<std::uint8_t>(rng());
  for (std::size_t j = 0; j < h.horizon; ++j) {
    c.controls.push_back({static_cast<int>(rng() % 2), static_cast<int>(rng() % 3) - 1, static_cast<int>(rng() % 3) - 1});
    c.targets.push_back({static_cast<int>(rng() % 2), static_cast<int>(rng() % 2)});
  }
  c.iteration = static_cast<std::uint32_t>(rng() % 5 + 1);
  c.game_id = static_cast<std::uint16_t>(rng() % 2);
  return c;
}

bool same(const TrainingCase& a, const TrainingCase& b) {
  return a.observation == b.observation && a.controls == b.controls && a.targets == b.targets &&
         a.iteration == b.iteration && a.game_id == b.game_id;
}

std::vector<char> bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("pixel quantization error is at most half a level") {
  for (int i = 0; i <= 100000; ++i) {
    const double v = i / 100000.0;
    CHECK(std::abs(dequantize_pixel(quantize_pixel(v)) - v) <= 1.0 / 510.0 + 1e-15);
  }
  for (int level = 0; level < 256; ++level) {
    CHECK(quantize_pixel(dequantize_pixel(static_cast<std::uint8_t>(level))) == level);
  }
}

TEST_CASE("dataset round trip, append, trailing bytes, truncation") {
  std::mt19937_64 rng(1);
  const auto h = small_header();
  const auto path = scratch("data.prld");
  std::vector<TrainingCase> cases;
  for (int i = 0; i < 37; ++i) cases.push_back(random_case(h, rng));

  create_dataset_file(path, h);
  append_cases(path, std::span(cases).first(20));
  append_cases(path, std::span(cases).subspan(20));
  auto loaded = load_dataset(path);
  CHECK(loaded.header() == h);
  REQUIRE(loaded.size() == cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) CHECK(same(loaded[i], cases[i]));

  // Re-saving the loaded set reproduces the file byte for byte.
  const auto copy = scratch("copy.prld");
  create_dataset_file(copy, loaded.header());
  append_cases(copy, loaded.cases());
  CHECK(bytes(copy) == bytes(path));

  std::size_t total = 0;
  for (const auto& [tag, n] : loaded.iteration_counts()) total += n;
  CHECK(total == cases.size());

  {
    std::ofstream garbage(path, std::ios::binary | std::ios::app);
    garbage << "partial record";
  }
  CHECK(load_dataset(path).size() == cases.size());

  const auto full = bytes(path);
  const auto cut = scratch("cut.prld");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(full.data(), static_cast<std::streamsize>(full.size() - 14 - h.record_size() / 2));
  }
  CHECK_THROWS_AS(load_dataset(cut), FormatError);

  auto bad = random_case(h, rng);
  bad.observation.pop_back();
  const TrainingCase bad_cases[] = {bad};
  CHECK_THROWS_AS(append_cases(path, bad_cases), FormatError);
  CHECK(load_dataset(path).size() == cases.size());

  {
    std::ofstream out(cut, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(load_dataset(cut), FormatError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto config = ModelConfig::desk();
  Model model(config, 3);
  // Give the optimizer and batch-norm buffers non-trivial state.
  std::mt19937_64 rng(5);
  std::vector<double> pixels(2 * 4 * 16 * 16);
  for (auto& p : pixels) p = static_cast<double>(rng() % 256) / 255.0;
  const auto frames = Tensor::from({2, 4, 16, 16}, pixels);
  const std::vector<std::vector<ControlVector>> seqs(2, std::vector<ControlVector>(config.unroll, {0, 1, 0}));
  const auto preds = model.rollout_training(frames, control_tensors(seqs));
  const auto loss = model_loss(preds, Tensor::filled({2, 2 * config.unroll}, 1.0));
  loss.backward();
  adam_step(model.parameters(), OptimizerConfig{});

  const ExperimentCursor cursor{4, 1234, "some generator state"};
  const auto path = scratch("model.prlm");
  save_checkpoint(path, model, cursor);
  const auto ckpt = load_checkpoint(path);
  CHECK(ckpt.cursor == cursor);
  CHECK(ckpt.model.config() == config);
  const auto a = std::as_const(model).parameters();
  const auto b = std::as_const(ckpt.model).parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(std::equal(a[i]->value.data().begin(), a[i]->value.data().end(), b[i]->value.data().begin(),
                     b[i]->value.data().end()));
    CHECK(a[i]->adam_m == b[i]->adam_m);
    CHECK(a[i]->adam_v == b[i]->adam_v);
    CHECK(a[i]->step_count == b[i]->step_count);
  }
  const auto sa = model.batch_norm_states();
  const auto sb = std::as_const(ckpt.model).batch_norm_states();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i]->running_mean == sb[i]->running_mean);
    CHECK(sa[i]->running_var == sb[i]->running_var);
  }
  const auto copy = scratch("model2.prlm");
  save_checkpoint(copy, ckpt.model, ckpt.cursor);
  CHECK(bytes(copy) == bytes(path));

  auto other = config;
  other.latent_dim = 16;
  CHECK_THROWS_AS(load_checkpoint(path, other), IncompatibleError);
  CHECK_NOTHROW(load_checkpoint(path, config));

  const auto full = bytes(path);
  {
    std::ofstream out(copy, std::ios::binary);
    out.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(copy), FormatError);
}
