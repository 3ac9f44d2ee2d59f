#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "prl/errors.hpp"
#include "prl/ops.hpp"

using namespace prl;
using prl::testing::max_relative_error;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Random linear functional of t, so every output element reaches the loss
// with a different weight.
struct Projector {
  Tensor weight;
  Tensor bias = Tensor::zeros({1});
  Projector(std::size_t n, std::mt19937_64& rng) : weight(random_tensor({n, 1}, rng, -1.0, 1.0, false)) {}
  Tensor operator()(const Tensor& t) const { return sum(linear(reshape(t, {1, t.numel()}), weight, bias)); }
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

constexpr int kShapes = 100;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("tensor construction and shape errors") {
  const auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t[4] == 5.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.backward(), DimensionError);
  CHECK_THROWS_AS(linear(t, Tensor::zeros({2, 2}), Tensor::zeros({2})), DimensionError);
}

TEST_CASE("gradient of sum(relu(x)) at [-1, 2]") {
  const auto x = Tensor::from({2}, {-1.0, 2.0}, true);
  sum(relu(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("backward twice doubles leaf gradients") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 3}, rng);
  const auto w = random_tensor({3, 2}, rng);
  const auto b = random_tensor({2}, rng);
  const auto loss = sum(sigmoid(linear(x, w, b)));
  loss.backward();
  const std::vector<double> once(w.grad().begin(), w.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == doctest::Approx(2 * once[i]).epsilon(1e-15));
}

TEST_CASE("no-grad guard records nothing") {
  const auto x = Tensor::from({1}, {1.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sigmoid(x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("sigmoid values and extremes") {
  const auto y = sigmoid(Tensor::from({3}, {1.0, -800.0, 800.0}));
  CHECK(y[0] == doctest::Approx(0.7310585786).epsilon(1e-10));
  CHECK(std::isfinite(y[1]));
  CHECK(y[1] >= 0.0);
  CHECK(y[2] == 1.0);
}

TEST_CASE("layer_norm example and constant rows") {
  const auto y = layer_norm(Tensor::from({1, 4}, {1, 2, 3, 4}));
  const double expected[] = {-1.3416, -0.4472, 0.4472, 1.3416};
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-4));
  const auto z = layer_norm(Tensor::from({1, 3}, {5, 5, 5}));
  for (int i = 0; i < 3; ++i) CHECK(z[i] == 0.0);
  for (double c : {1e-9, 0.1, -3.7e5}) {
    const auto w = layer_norm(Tensor::from({1, 512}, std::vector<double>(512, c)));
    for (double v : w.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("conv2d of ones") {
  const auto y = conv2d(Tensor::filled({1, 1, 4, 4}, 1.0), Tensor::filled({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(y[i] == 9.0);
  CHECK_THROWS_AS(conv2d(Tensor::filled({1, 1, 2, 2}, 1.0), Tensor::filled({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 0),
                  DimensionError);
}

TEST_CASE("bce_loss values, clamp and errors") {
  CHECK(bce_loss(Tensor::from({1}, {0.5}), Tensor::from({1}, {1.0})).item() == doctest::Approx(std::log(2.0)));
  const double clamped = bce_loss(Tensor::from({1}, {0.0}), Tensor::from({1}, {1.0})).item();
  CHECK(clamped == doctest::Approx(-std::log(kLossClamp)));
  CHECK_THROWS_AS(bce_loss(Tensor::from({1}, {0.5}), Tensor::from({1}, {0.3})), ValidationError);
  const auto mask = Tensor::from({2}, {1.0, 0.0});
  const double masked = bce_loss(Tensor::from({2}, {0.5, 0.9}), Tensor::from({2}, {1.0, 0.0}), mask).item();
  CHECK(masked == doctest::Approx(std::log(2.0)));
}

TEST_CASE("batch_norm modes") {
  std::mt19937_64 rng(5);
  BatchNormState state(2);
  const auto x = random_tensor({4, 2, 3, 3}, rng, -2, 3, false);
  const auto g = Tensor::filled({2}, 1.0), b = Tensor::zeros({2});
  const auto y = batch_norm(x, state, g, b, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) m += y[(n * 2 + c) * 9 + i];
    CHECK(m / 36 == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(state.running_mean[0] != 0.0);
  const auto before = state.running_mean;
  batch_norm(x, state, g, b, Mode::eval);
  CHECK(state.running_mean == before);
  CHECK_THROWS_AS(batch_norm(random_tensor({1, 2, 3, 3}, rng), state, g, b, Mode::train), ValidationError);
}

TEST_CASE("finite-difference checks over random shapes") {
  std::mt19937_64 rng(11);

  SUBCASE("linear") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t B = pick(rng, 1, 4), I = pick(rng, 1, 5), O = pick(rng, 1, 5);
      const auto x = random_tensor({B, I}, rng), w = random_tensor({I, O}, rng), b = random_tensor({O}, rng);
      Projector p(B * O, rng);
      CHECK(max_relative_error([&] { return p(linear(x, w, b)); }, {x, w, b}) < kTol);
    }
  }
  SUBCASE("relu away from the kink") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t n = pick(rng, 1, 12);
      auto x = random_tensor({n}, rng);
      for (auto& v : x.data()) v = v < 0 ? v - 0.01 : v + 0.01;
      Projector p(n, rng);
      CHECK(max_relative_error([&] { return p(relu(x)); }, {x}) < kTol);
    }
  }
  SUBCASE("sigmoid") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t n = pick(rng, 1, 12);
      const auto x = random_tensor({n}, rng, -4, 4);
      Projector p(n, rng);
      CHECK(max_relative_error([&] { return p(sigmoid(x)); }, {x}) < kTol);
    }
  }
  SUBCASE("layer_norm") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t B = pick(rng, 1, 3), N = pick(rng, 2, 10);
      const auto x = random_tensor({B, N}, rng, -2, 2);
      Projector p(B * N, rng);
      CHECK(max_relative_error([&] { return p(layer_norm(x)); }, {x}) < kTol);
    }
  }
  SUBCASE("batch_norm train") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t B = pick(rng, 2, 3), C = pick(rng, 1, 3), H = pick(rng, 1, 3), W = pick(rng, 1, 3);
      const auto x = random_tensor({B, C, H, W}, rng, -2, 2);
      const auto g = random_tensor({C}, rng, 0.5, 1.5), b = random_tensor({C}, rng);
      Projector p(B * C * H * W, rng);
      CHECK(max_relative_error(
                [&] {
                  BatchNormState st(C);
                  return p(batch_norm(x, st, g, b, Mode::train));
                },
                {x, g, b}) < kTol);
    }
  }
  SUBCASE("conv2d") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t B = pick(rng, 1, 2), Ci = pick(rng, 1, 2), Co = pick(rng, 1, 3), K = pick(rng, 1, 3);
      const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
      const std::size_t H = pick(rng, K, 6), W = pick(rng, K, 6);
      const auto x = random_tensor({B, Ci, H, W}, rng), w = random_tensor({Co, Ci, K, K}, rng), b = random_tensor({Co}, rng);
      const auto y = conv2d(x, w, b, stride, pad);
      Projector p(y.numel(), rng);
      CHECK(max_relative_error([&] { return p(conv2d(x, w, b, stride, pad)); }, {x, w, b}) < kTol);
    }
  }
  SUBCASE("bce_loss with and without mask") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t n = pick(rng, 1, 10);
      const auto pred = random_tensor({n}, rng, 0.05, 0.95);
      std::vector<double> t(n), m(n);
      for (std::size_t i = 0; i < n; ++i) {
        t[i] = static_cast<double>(pick(rng, 0, 1));
        m[i] = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
      }
      const auto target = Tensor::from({n}, t);
      const auto mask = Tensor::from({n}, m);
      CHECK(max_relative_error([&] { return bce_loss(pred, target); }, {pred}) < kTol);
      CHECK(max_relative_error([&] { return bce_loss(pred, target, mask); }, {pred}) < kTol);
    }
  }
  SUBCASE("add, reshape, concat_cols") {
    for (int s = 0; s < kShapes; ++s) {
      const std::size_t B = pick(rng, 1, 3), n1 = pick(rng, 1, 4), n2 = pick(rng, 1, 4);
      const auto a = random_tensor({B, n1}, rng), b = random_tensor({B, n1}, rng), c = random_tensor({B, n2}, rng);
      Projector p(B * (n1 + n2), rng);
      CHECK(max_relative_error(
                [&] {
                  const Tensor parts[] = {add(a, b), reshape(reshape(c, {B * n2}), {B, n2})};
                  return p(concat_cols(parts));
                },
                {a, b, c}) < kTol);
    }
  }
}

TEST_CASE("shared weights across unrolled steps sum their contributions") {
  std::mt19937_64 rng(21);
  const auto w = random_tensor({3, 3}, rng), b = random_tensor({3}, rng), h0 = random_tensor({2, 3}, rng);
  auto unroll = [&] {
    Tensor h = h0;
    for (int t = 0; t < 3; ++t) h = add(h, relu(linear(layer_norm(h), w, b)));
    return sum(sigmoid(h));
  };
  CHECK(max_relative_error(unroll, {w, b, h0}) < kTol);
}
