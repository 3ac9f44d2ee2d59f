#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "prl/errors.hpp"
#include "prl/ops.hpp"
#include "prl/optim.hpp"

using namespace prl;

namespace {

Parameter scalar_param(double value, double grad) {
  Parameter p("p", Tensor::from({1}, {value}));
  p.value.zero_grad();
  p.value.grad()[0] = grad;
  return p;
}

void step(Parameter& p, const OptimizerConfig& c) {
  Parameter* ps[] = {&p};
  adam_step(ps, c);
}

}  // namespace

TEST_CASE("first Adam step moves by lr / (1 + eps)") {
  OptimizerConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.0;
  auto p = scalar_param(1.0, 1.0);
  step(p, c);
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(p.step_count == 1);
}

TEST_CASE("gradients are clamped before the moments") {
  OptimizerConfig c;
  auto big = scalar_param(0.3, 5.0);
  auto unit = scalar_param(0.3, 1.0);
  for (int i = 0; i < 3; ++i) {
    step(big, c);
    step(unit, c);
    big.value.grad()[0] = 5.0;
    unit.value.grad()[0] = 1.0;
  }
  CHECK(big.value[0] == unit.value[0]);
  CHECK(big.adam_m == unit.adam_m);
  CHECK(big.adam_v == unit.adam_v);
}

TEST_CASE("decoupled weight decay with zero gradient") {
  OptimizerConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.5;
  auto p = scalar_param(2.0, 0.0);
  step(p, c);
  CHECK(p.value[0] == doctest::Approx(2.0 - 0.01 * 0.5 * 2.0).epsilon(1e-14));
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig c;
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.weight_decay = -1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("parameter copies are deep") {
  Parameter a("a", Tensor::from({2}, {1.0, 2.0}));
  Parameter b = a;
  b.value.data()[0] = 9.0;
  CHECK(a.value[0] == 1.0);
}

TEST_CASE("composite MLP: gradient check and loss decreases under Adam") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.5);
  auto rand = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor::from(std::move(s), std::move(v));
  };
  Parameter w1("w1", rand({3, 8})), b1("b1", rand({8})), w2("w2", rand({8, 1})), b2("b2", rand({1}));
  const auto x = rand({16, 3});
  std::vector<double> t(16);
  for (std::size_t i = 0; i < 16; ++i) t[i] = x[i * 3] + x[i * 3 + 1] > 0 ? 1.0 : 0.0;
  const auto target = Tensor::from({16, 1}, t);
  auto loss = [&] { return bce_loss(sigmoid(linear(relu(linear(x, w1.value, b1.value)), w2.value, b2.value)), target); };

  CHECK(prl::testing::max_relative_error(loss, {w1.value, b1.value, w2.value, b2.value}) < 1e-4);

  OptimizerConfig c;
  c.learning_rate = 0.05;
  Parameter* ps[] = {&w1, &b1, &w2, &b2};
  const double start = loss().item();
  for (int i = 0; i < 200; ++i) {
    for (auto* p : ps) p->zero_grad();
    loss().backward();
    adam_step(ps, c);
  }
  CHECK(loss().item() < 0.5 * start);
}
