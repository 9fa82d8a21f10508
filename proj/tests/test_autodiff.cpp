#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "uptb/autodiff.hpp"

using namespace uptb;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Contracts an arbitrary-shape output with fixed weights so every output
// coordinate influences the scalar.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape())));
}

}  // namespace

TEST_CASE("elementwise and matmul examples") {
  const Tensor s = add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  CHECK(s[0] == 4.0);
  CHECK(s[1] == 6.0);

  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor m = Tensor::matrix(2, 2, {5, 6, 7, 8});
  const Tensor p = matmul(eye, m);
  CHECK(p.shape() == Shape{2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == m[i]);

  const Tensor ls = log_softmax(Tensor::vector({0, 0}), 0);
  CHECK(ls[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(ls[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("backward on simple losses") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({0.3, -2.0, 7.0}));
  const Tensor g = tape.backward(sum(x)).of(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == 1.0);

  Tape tape2;
  const Tensor y = tape2.variable(Tensor::vector({2, -3}));
  const Tensor gy = tape2.backward(sum(square(y))).of(y);
  CHECK(gy[0] == 4.0);
  CHECK(gy[1] == -6.0);
}

TEST_CASE("unreachable variables get zero gradients") {
  Tape tape;
  const Tensor a = tape.variable(Tensor::vector({1, 2}));
  const Tensor b = tape.variable(Tensor::vector({3, 4, 5}));
  const Tensor loss = sum(square(a));
  const Tensor gb = tape.backward(loss).of(b);
  CHECK(gb.shape() == Shape{3});
  for (double v : gb.values()) CHECK(v == 0.0);
}

TEST_CASE("chain rule on a two-op composition") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({0.5, -1.5}));
  const Tensor g = tape.backward(sum(exp(square(x)))).of(x);
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = x[i];
    CHECK(g[i] == doctest::Approx(2 * v * std::exp(v * v)).epsilon(1e-14));
  }
  Tape tape2;
  const Tensor z = tape2.variable(Tensor::vector({0.2}));
  const Tensor gz = tape2.backward(sum(tanh(scalar_mul(z, 3.0)))).of(z);
  const double t = std::tanh(0.6);
  CHECK(gz[0] == doctest::Approx(3.0 * (1 - t * t)).epsilon(1e-14));
}

TEST_CASE("backward is bitwise deterministic") {
  std::mt19937_64 rng(7);
  Tape tape;
  const Tensor x = tape.variable(random_tensor(rng, {4, 5}));
  const Tensor w = random_tensor(rng, {5, 3});
  const Tensor loss = sum(log_softmax(tanh(matmul(x, w)), 1));
  const Tensor g1 = tape.backward(loss).of(x);
  const Tensor g2 = tape.backward(loss).of(x);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("finite difference oracle bounds") {
  std::mt19937_64 rng(3);
  const Tensor p = random_tensor(rng, {6});
  CHECK(finite_difference_check([](const Tensor& x) { return sum(x); }, p,
                                1e-4) <= 1e-8);
  CHECK(finite_difference_check(
            [](const Tensor& x) { return sum(square(x)); },
            Tensor::vector({1, 2, 3}), 1e-4) <= 1e-6);
  CHECK_THROWS_AS(finite_difference_check(
                      [](const Tensor& x) { return sum(x); }, p, 0.0),
                  ContractError);
  CHECK_THROWS_AS(finite_difference_check(
                      [](const Tensor& x) { return log(x); }, p, 1e-4),
                  Error);
}

TEST_CASE("every primitive matches central differences") {
  struct Case {
    Primitive kind;
    Shape shape;
    std::function<Tensor(const Tensor&)> build;
    double lo = -1.0;
    double hi = 1.0;
  };
  std::mt19937_64 crng(11);
  const Tensor other23 = random_tensor(crng, {2, 3});
  const Tensor other34 = random_tensor(crng, {3, 4});
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  auto args = [](auto fill) {
    PrimitiveArgs a;
    fill(a);
    return a;
  };
  auto one = [](Primitive k, PrimitiveArgs a = {}) {
    return [k, a](const Tensor& x) {
      const Tensor in[] = {x};
      return apply_primitive(k, in, a);
    };
  };
  std::vector<Case> cases{
      {Primitive::kAdd, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {x, other23}; return apply_primitive(Primitive::kAdd, in); }},
      {Primitive::kAdd, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {other23, x}; return apply_primitive(Primitive::kAdd, in); }},
      {Primitive::kSub, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {other23, x}; return apply_primitive(Primitive::kSub, in); }},
      {Primitive::kMul, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {x, other23}; return apply_primitive(Primitive::kMul, in); }},
      {Primitive::kMul, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {x, x}; return apply_primitive(Primitive::kMul, in); }},
      {Primitive::kScalarMul, {5}, one(Primitive::kScalarMul, args([](auto& a) { a.scalar = -2.5; }))},
      {Primitive::kMatmul, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {x, other34}; return apply_primitive(Primitive::kMatmul, in); }},
      {Primitive::kMatmul, {3, 4},
       [&](const Tensor& x) { const Tensor in[] = {other23, x}; return apply_primitive(Primitive::kMatmul, in); }},
      {Primitive::kTranspose, {2, 3}, one(Primitive::kTranspose)},
      {Primitive::kReshape, {2, 3}, one(Primitive::kReshape, args([](auto& a) { a.shape = {3, 2}; }))},
      {Primitive::kConcat, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {other23, x, other23}; PrimitiveArgs a; a.axis = 1; return apply_primitive(Primitive::kConcat, in, a); }},
      {Primitive::kConcat, {2, 3},
       [&](const Tensor& x) { const Tensor in[] = {x, other23}; return apply_primitive(Primitive::kConcat, in); }},
      {Primitive::kSlice, {4, 3}, one(Primitive::kSlice, args([](auto& a) { a.axis = 1; a.begin = 1; a.end = 3; }))},
      {Primitive::kPadZeros, {2, 3}, one(Primitive::kPadZeros, args([](auto& a) { a.axis = 1; a.pad_before = 2; a.pad_after = 1; }))},
      {Primitive::kStack, {3},
       [&](const Tensor& x) { const Tensor in[] = {x, square(x)}; return apply_primitive(Primitive::kStack, in); }},
      {Primitive::kTanh, {6}, one(Primitive::kTanh)},
      {Primitive::kSigmoid, {6}, one(Primitive::kSigmoid)},
      {Primitive::kRelu, {6}, one(Primitive::kRelu)},
      {Primitive::kExp, {6}, one(Primitive::kExp)},
      {Primitive::kLog, {6}, one(Primitive::kLog), 0.5, 2.0},
      {Primitive::kSquare, {6}, one(Primitive::kSquare)},
      {Primitive::kReduceSum, {2, 3, 2}, one(Primitive::kReduceSum, args([](auto& a) { a.axis = 1; }))},
      {Primitive::kReduceMax, {3, 4}, one(Primitive::kReduceMax, args([](auto& a) { a.axis = 0; }))},
      {Primitive::kSoftmax, {3, 4}, one(Primitive::kSoftmax, args([](auto& a) { a.axis = 1; }))},
      {Primitive::kLogSoftmax, {3, 4}, one(Primitive::kLogSoftmax, args([](auto& a) { a.axis = 0; }))},
      {Primitive::kGather, {3, 2}, one(Primitive::kGather, args([&](auto& a) { a.indices = idx; }))},
      {Primitive::kPowerSpectrum, {2, 8}, one(Primitive::kPowerSpectrum)},
  };
  std::mt19937_64 rng(2024);
  for (const Case& c : cases) {
    CAPTURE(primitive_name(c.kind));
    for (int trial = 0; trial < 10; ++trial) {
      Tensor point = random_tensor(rng, c.shape, c.lo, c.hi);
      if (c.kind == Primitive::kRelu) {
        // keep probes away from the kink
        std::vector<double> v(point.values().begin(), point.values().end());
        for (double& x : v) x += x >= 0 ? 0.05 : -0.05;
        point = Tensor(c.shape, v);
      }
      const auto f = [&](const Tensor& x) { return weighted_sum(c.build(x), 99); };
      CHECK(finite_difference_check(f, point, 1e-4) <= 1e-5);
    }
  }
}

TEST_CASE("conformance and domain errors") {
  const Tensor a = Tensor::vector({1, 2});
  const Tensor b = Tensor::vector({1, 2, 3});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(Tensor::matrix(2, 3, std::vector<double>(6)),
                               Tensor::matrix(2, 3, std::vector<double>(6))),
                  ShapeError);
  CHECK_THROWS_AS((void)log(Tensor::vector({1.0, -1.0})), DomainError);
  CHECK_THROWS_AS((void)softmax(Tensor::vector({1.0, INFINITY}), 0), DomainError);
  CHECK_THROWS_AS((void)Tensor(Shape{2, 2}, std::vector<double>(3)), ShapeError);

  Tape tape;
  const Tensor x = tape.variable(a);
  CHECK_THROWS_AS((void)tape.backward(square(x)), ContractError);

  Tape other;
  const Tensor y = other.variable(a);
  CHECK_THROWS_AS((void)add(x, y), ContractError);
}

TEST_CASE("constants are not recorded") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({1, 2}));
  const Tensor c = scalar_mul(Tensor::vector({3, 4}), 2.0);
  CHECK_FALSE(c.on_tape());
  const Tensor y = add(x, c);
  CHECK(y.on_tape());
  CHECK(tape.size() == 2);
}

TEST_CASE("power spectrum of a pure tone peaks at its bin") {
  const std::size_t n = 16;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::cos(2 * M_PI * 3 * i / n);
  const Tensor p = power_spectrum(Tensor::matrix(1, n, v));
  CHECK(p.shape() == Shape{1, 9});
  CHECK(p[3] == doctest::Approx(64.0).epsilon(1e-12));
  for (std::size_t k = 0; k < 9; ++k) {
    if (k != 3) CHECK(std::abs(p[k]) < 1e-12);
  }
}
