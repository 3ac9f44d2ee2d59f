#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "grad_check.hpp"
#include "prl/errors.hpp"
#include "prl/model.hpp"

using namespace prl;

namespace {

Parameter& param(Model& m, const std::string& name) {
  for (auto* p : m.parameters()) {
    if (p->name == name) return *p;
  }
  FAIL("no parameter " << name);
  throw;
}

ModelConfig tiny() {
  ModelConfig c;
  c.frame_stack = 2;
  c.frame_height = 8;
  c.frame_width = 8;
  c.latent_dim = 4;
  c.hidden_dim = 6;
  c.unroll = 3;
  c.perception = {{2, 3, 2, 1, false}};
  return c;
}

Observation random_obs(const ModelConfig& c, std::mt19937_64& rng) {
  Observation o{c.frame_stack, c.frame_height, c.frame_width, {}};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  o.pixels.resize(c.frame_stack * c.frame_height * c.frame_width);
  for (auto& p : o.pixels) p = u(rng);
  return o;
}

std::vector<ControlVector> random_controls(std::size_t k, std::mt19937_64& rng) {
  std::vector<ControlVector> out(k);
  for (auto& c : out) {
    c.shoot = static_cast<int>(rng() % 2);
    c.horizontal = static_cast<int>(rng() % 3) - 1;
    c.vertical = static_cast<int>(rng() % 3) - 1;
  }
  return out;
}

std::size_t count(std::span<Parameter* const> ps) {
  std::size_t n = 0;
  for (auto* p : ps) n += p->value.numel();
  return n;
}

}  // namespace

TEST_CASE("presets and validation") {
  CHECK_NOTHROW(ModelConfig::desk().validate());
  CHECK(ModelConfig::desk().perception_output_hw() == std::pair<std::size_t, std::size_t>{4, 4});
  CHECK(ModelConfig::paper_scale().perception_output_hw() == std::pair<std::size_t, std::size_t>{6, 6});
  auto bad = ModelConfig::desk();
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ModelConfig::desk();
  bad.perception = {{8, 3, 1, 1, true}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("paper-scale parameter counts") {
  Model m(ModelConfig::paper_scale(), 1);
  CHECK(count(m.prediction_parameters()) == (103 * 500 + 500) + (500 * 100 + 100));
  CHECK(count(m.valuation_parameters()) == (100 * 100 + 100) + (100 * 2 + 2));
  CHECK(param(m, "prediction.f1.weight").value.shape() == Shape{103, 500});
  CHECK(param(m, "valuation.v2.weight").value.shape() == Shape{100, 2});
  std::mt19937_64 rng(2);
  const auto obs = random_obs(m.config(), rng);
  CHECK(m.perceive(obs).size() == 100);
}

TEST_CASE("initialisation") {
  const auto c = ModelConfig::desk();
  Model a(c, 7), b(c, 7), d(c, 8);
  const auto pa = std::as_const(a).parameters(), pb = std::as_const(b).parameters(), pd = std::as_const(d).parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::equal(pa[i]->value.data().begin(), pa[i]->value.data().end(), pb[i]->value.data().begin()));
    differs = differs || !std::equal(pa[i]->value.data().begin(), pa[i]->value.data().end(), pd[i]->value.data().begin());
    if (pa[i]->name.ends_with(".bias")) {
      for (double v : pa[i]->value.data()) CHECK(v == 0.0);
    }
  }
  CHECK(differs);

  std::mt19937_64 rng(9);
  double death = 0, point = 0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    const auto preds = a.rollout(random_obs(c, rng), random_controls(c.unroll, rng));
    for (const auto& p : preds) {
      CHECK(p.p_death > 0.0);
      CHECK(p.p_death < 1.0);
      death += p.p_death;
      point += p.p_point;
    }
  }
  death /= n * c.unroll;
  point /= n * c.unroll;
  CHECK(death >= 0.3);
  CHECK(death <= 0.7);
  CHECK(point >= 0.3);
  CHECK(point <= 0.7);
}

TEST_CASE("perception: shape errors, determinism, one-pixel sensitivity") {
  const auto c = ModelConfig::desk();
  Model m(c, 3);
  std::mt19937_64 rng(1);
  const auto obs = random_obs(c, rng);
  CHECK(m.perceive(obs) == m.perceive(obs));
  auto nudged = obs;
  nudged.pixels[123] = std::min(1.0, nudged.pixels[123] + 0.1);
  const double delta = std::abs(nudged.pixels[123] - obs.pixels[123]);
  const auto h0 = m.perceive(obs), h1 = m.perceive(nudged);
  double norm = 0;
  for (std::size_t i = 0; i < h0.size(); ++i) norm += (h1[i] - h0[i]) * (h1[i] - h0[i]);
  CHECK(std::sqrt(norm) < 10 * delta);
  Observation wrong = obs;
  wrong.height = 8;
  wrong.pixels.resize(4 * 8 * 16);
  CHECK_THROWS_AS(m.perceive(wrong), DimensionError);
}

TEST_CASE("rrnn_step: zero residual, residual identity, hand-computed toy") {
  auto c = tiny();
  Model m(c, 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    LatentState h(c.latent_dim);
    for (auto& v : h) v = n(rng);
    const auto ctl = random_controls(1, rng)[0];
    const auto [next, residual] = m.rrnn_step(h, ctl);
    // h_next is one rounded addition away from h + residual.
    for (std::size_t j = 0; j < h.size(); ++j) {
      const double ulp = std::numeric_limits<double>::epsilon() * std::max(std::abs(h[j]), std::abs(next[j]));
      CHECK(std::abs((next[j] - h[j]) - residual[j]) <= ulp);
    }
  }
  for (auto* p : m.prediction_parameters()) std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
  LatentState h{0.3, -7.0, 1e6, 2.5};
  CHECK(m.rrnn_step(h, {1, -1, 0}).first == h);

  c.latent_dim = 2;
  c.hidden_dim = 2;
  Model toy(c, 1);
  // f1: 5x2 (rows: LN(h)_0, LN(h)_1, shoot, horizontal, vertical), f2: 2x2.
  auto& f1 = param(toy, "prediction.f1.weight");
  auto& b1 = param(toy, "prediction.f1.bias");
  auto& f2 = param(toy, "prediction.f2.weight");
  auto& b2 = param(toy, "prediction.f2.bias");
  const double w1[] = {1.0, -1.0, 2.0, 0.5, -0.5, 1.0, 0.25, -2.0, 3.0, 1.0};
  std::copy(std::begin(w1), std::end(w1), f1.value.data().begin());
  b1.value.data()[0] = 0.1;
  b1.value.data()[1] = -0.2;
  const double w2[] = {1.0, 2.0, -1.0, 0.5};
  std::copy(std::begin(w2), std::end(w2), f2.value.data().begin());
  b2.value.data()[0] = 0.05;
  b2.value.data()[1] = 0.0;

  const LatentState h2{1.0, 3.0};
  const ControlVector ctl{1, -1, 0};
  // LN([1,3]) = [-1, 1] / (1 + 1e-5); the ReLU drops the negative entry.
  const double ln1 = 1.0 / (1.0 + 1e-5);
  const double x[] = {0.0, ln1, 1.0, -1.0, 0.0};
  double hidden[2];
  for (int j = 0; j < 2; ++j) {
    double s = j == 0 ? 0.1 : -0.2;
    for (int i = 0; i < 5; ++i) s += x[i] * w1[i * 2 + j];
    hidden[j] = std::max(0.0, s);
  }
  double expected[2];
  for (int j = 0; j < 2; ++j) {
    double s = j == 0 ? 0.05 : 0.0;
    for (int i = 0; i < 2; ++i) s += hidden[i] * w2[i * 2 + j];
    expected[j] = h2[j] + s;
  }
  const auto got = toy.rrnn_step(h2, ctl).first;
  CHECK(got[0] == doctest::Approx(expected[0]).epsilon(1e-12));
  CHECK(got[1] == doctest::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("200 recurrent steps stay bounded") {
  const auto c = ModelConfig::desk();
  Model m(c, 11);
  std::mt19937_64 rng(3);
  LatentState h = m.perceive(random_obs(c, rng));
  for (int s = 0; s < 200; ++s) h = m.rrnn_step(h, random_controls(1, rng)[0]).first;
  double inf = 0;
  for (double v : h) {
    REQUIRE(std::isfinite(v));
    inf = std::max(inf, std::abs(v));
  }
  CHECK(inf < 1e3);
}

TEST_CASE("valuation is invariant to affine rescaling of h") {
  Model m(ModelConfig::desk(), 2);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 20; ++i) {
    LatentState h(32), g(32);
    for (std::size_t j = 0; j < 32; ++j) {
      h[j] = u(rng);
      g[j] = 1000 * h[j] + 7;
    }
    const auto a = m.valuate(h), b = m.valuate(g);
    CHECK(std::abs(a.p_death - b.p_death) < 1e-6);
    CHECK(std::abs(a.p_point - b.p_point) < 1e-6);
  }
}

TEST_CASE("rollout composition and prefix consistency") {
  auto c = ModelConfig::desk();
  c.unroll = 25;
  Model m(c, 6);
  std::mt19937_64 rng(10);
  const auto obs = random_obs(c, rng);
  const auto ctl = random_controls(25, rng);
  const auto full = m.rollout(obs, ctl);
  REQUIRE(full.size() == 25);
  const auto one = m.valuate(m.rrnn_step(m.perceive(obs), ctl[0]).first);
  CHECK(full[0].p_death == one.p_death);
  CHECK(full[0].p_point == one.p_point);
  for (std::size_t k : {1u, 5u, 10u, 24u}) {
    const auto part = m.rollout(obs, std::span(ctl).first(k));
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(part[j].p_death == full[j].p_death);
      CHECK(part[j].p_point == full[j].p_point);
    }
  }
  CHECK_THROWS_AS(m.rollout(obs, std::span<const ControlVector>{}), ValidationError);
}

TEST_CASE("paper-scale rollout at k = 25") {
  Model m(ModelConfig::paper_scale(), 1);
  std::mt19937_64 rng(1);
  const auto preds = m.rollout(random_obs(m.config(), rng), random_controls(25, rng));
  CHECK(preds.size() == 25);
}

TEST_CASE("model_loss") {
  const std::vector<StepPrediction> exact{{1e-9, 1 - 1e-9}, {1 - 1e-9, 1e-9}};
  const std::vector<TargetVector> t{{0, 1}, {1, 0}};
  CHECK(model_loss(exact, t) <= 1e-6);
  const std::vector<StepPrediction> half(2);
  CHECK(model_loss(half, t) == doctest::Approx(std::log(2.0)));
  const std::vector<StepPrediction> p{{0.2, 0.7}, {0.6, 0.1}};
  const std::vector<TargetVector> swapped{{1, 0}, {0, 1}};
  CHECK(model_loss(p, t) != doctest::Approx(model_loss(p, swapped)));
}

TEST_CASE("unrolled gradient check on the tiny model") {
  const auto c = tiny();
  // Central differences are meaningless across a ReLU kink; with seed 12
  // one pre-activation sits ~1e-6 from zero, so this uses seed 1.
  Model m(c, 1);
  std::mt19937_64 rng(13);
  const std::size_t B = 3;
  std::vector<Observation> obs;
  std::vector<std::vector<ControlVector>> seqs;
  for (std::size_t b = 0; b < B; ++b) {
    obs.push_back(random_obs(c, rng));
    seqs.push_back(random_controls(c.unroll, rng));
  }
  const auto frames = observation_tensor(obs);
  const auto controls = control_tensors(seqs);
  std::vector<double> t(B * 2 * c.unroll);
  for (auto& v : t) v = static_cast<double>(rng() % 2);
  const auto targets = Tensor::from({B, 2 * c.unroll}, t);

  for (auto group : {m.perception_parameters(), m.prediction_parameters(), m.valuation_parameters()}) {
    std::vector<Tensor> leaves;
    for (auto* p : group) leaves.push_back(p->value);
    const double err = prl::testing::max_relative_error(
        [&] { return model_loss(m.rollout_training(frames, controls), targets); }, leaves);
    CHECK(err < 1e-4);
  }
}
