// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "lrdm/autodiff.hpp"
#include "lrdm/models.hpp"
#include "support.hpp"

using namespace lrdm;
using lrdm::test::check_gradients;
using lrdm::test::random_matrix;

namespace {

TensorPtr random_param(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return make_parameter(std::move(shape), random_matrix(1, n, seed, lo, hi).data);
}

}  // namespace

TEST_CASE("elementwise add and identity matmul") {
  Tape tape;
  auto a = tape.constant(Tensor({2}, {1, 2}));
  auto b = tape.constant(Tensor({2}, {3, 4}));
  auto c = a + b;
  CHECK(c.values()[0] == 4.0);
  CHECK(c.values()[1] == 6.0);

  const Matrix A = random_matrix(3, 4, 7);
  auto I = tape.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto prod = matmul(I, tape.constant(A));
  CHECK(prod.to_matrix() == A);
}

TEST_CASE("gradient of sum of squares") {
  auto x = make_parameter({3}, {1, 2, 3});
  Tape tape;
  tape.backward(sum(square(tape.param(x))));
  CHECK(x->grad()[0] == doctest::Approx(2.0));
  CHECK(x->grad()[1] == doctest::Approx(4.0));
  CHECK(x->grad()[2] == doctest::Approx(6.0));

  // central differences, h = 1e-5
  const ParamList ps{{"x", x}};
  const auto gc = check_gradients(ps, [&](Tape& t) { return sum(square(t.param(x))); });
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("backward contracts") {
  SUBCASE("constant loss leaves grads at zero") {
    auto w = make_parameter({2}, {0.5, -1.0});
    Tape tape;
    (void)tape.param(w);
    tape.backward(tape.scalar(3.0));
    CHECK(w->grad()[0] == 0.0);
    CHECK(w->grad()[1] == 0.0);
  }
  SUBCASE("linear loss: grad(w) = x") {
    auto w = make_parameter({1, 3}, {0.1, 0.2, 0.3});
    Tape tape;
    auto x = tape.constant(Tensor({3, 1}, {4, -5, 6}));
    tape.backward(sum(matmul(tape.param(w), x)));
    CHECK(w->grad()[0] == 4.0);
    CHECK(w->grad()[1] == -5.0);
    CHECK(w->grad()[2] == 6.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    auto w = make_parameter({2}, {1, 2});
    Tape tape;
    CHECK_THROWS_AS(tape.backward(square(tape.param(w))), std::invalid_argument);
  }
  SUBCASE("two backward passes double the gradient exactly") {
    auto w = make_parameter({3}, {0.3, -0.7, 1.1});
    Tape tape;
    auto loss = sum(exp(tape.param(w)));
    tape.backward(loss);
    const std::vector<double> once(w->grad().begin(), w->grad().end());
    tape.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w->grad()[i] == 2.0 * once[i]);
  }
}

TEST_CASE("shape mismatch names both shapes and the op") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({2, 2}));
  try {
    (void)add(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(a, a), std::invalid_argument);
  // leading-axis broadcasting is not guessed
  CHECK_THROWS_AS((void)mul(a, tape.constant(Tensor({2}))), std::invalid_argument);
}

TEST_CASE("trailing-axis broadcasting") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = tape.constant(Tensor({3}, {10, 20, 30}));
  auto c = add(a, b);
  CHECK(c.values()[3] == 14.0);
  CHECK(c.values()[5] == 36.0);
  auto d = mul(a, tape.scalar(2.0));
  CHECK(d.values()[4] == 10.0);
}

TEST_CASE("every primitive matches central differences on [-2, 2]") {
  // Positive inputs for log.
  auto a = random_param({3, 4}, 11);
  auto b = random_param({3, 4}, 12);
  auto row = random_param({4}, 13);
  auto m = random_param({4, 2}, 14);
  auto pos = random_param({3, 4}, 15, 0.2, 2.0);
  const ParamList ps{{"a", a}, {"b", b}, {"row", row}, {"m", m}, {"pos", pos}};

  using Fn = std::function<Var(Tape&)>;
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add", [&](Tape& t) { return sum(square(t.param(a) + t.param(b))); }},
      {"sub", [&](Tape& t) { return sum(square(t.param(a) - t.param(row))); }},
      {"mul", [&](Tape& t) { return sum(t.param(a) * t.param(b)); }},
      {"broadcast mul", [&](Tape& t) { return sum(t.param(a) * t.param(row)); }},
      {"scale/add_scalar/neg", [&](Tape& t) { return sum(square(-(2.5 * t.param(a)) + 0.3)); }},
      {"matmul", [&](Tape& t) { return sum(square(matmul(t.param(a), t.param(m)))); }},
      {"concat", [&](Tape& t) { return sum(square(concat_last({t.param(a), t.param(b)}) * 1.5)); }},
      {"mean", [&](Tape& t) { return mean(square(t.param(a))); }},
      {"sum_last", [&](Tape& t) { return sum(square(sum_last(t.param(a)))); }},
      {"exp", [&](Tape& t) { return sum(exp(t.param(a))); }},
      {"log", [&](Tape& t) { return sum(log(t.param(pos))); }},
      {"silu", [&](Tape& t) { return sum(silu(t.param(a))); }},
      {"relu", [&](Tape& t) { return sum(square(relu(t.param(a)))); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const auto gc = check_gradients(ps, fn);
    CHECK(gc.max_rel_err < 1e-4);
  }
}

TEST_CASE("random two-layer net with 10 parameters matches finite differences") {
  // 2 -> 2 (w1 4 + b1 2) -> 1 (w2 2 + b2 1) = 9, plus one scalar gain = 10
  auto w1 = random_param({2, 2}, 21);
  auto b1 = random_param({2}, 22);
  auto w2 = random_param({2, 1}, 23);
  auto b2 = random_param({1}, 24);
  auto g = random_param({1}, 25);
  const ParamList ps{{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"g", g}};
  std::size_t total = 0;
  for (const auto& p : ps) total += p.tensor->size();
  CHECK(total == 10);
  const Matrix x = random_matrix(5, 2, 26);
  const auto gc = check_gradients(ps, [&](Tape& t) {
    auto h = silu(matmul(t.constant(x), t.param(w1)) + t.param(b1));
    auto y = (matmul(h, t.param(w2)) + t.param(b2)) * t.param(g);
    return mean(square(y));
  });
  CHECK(gc.max_rel_err < 1e-4);
  CHECK(gc.nonzero == 10);
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(3);
  Mlp net = Mlp::make(4, 16, 2, 3, rng);
  const Matrix x = random_matrix(8, 4, 4);
  Tape t1(false), t2(false);
  const Matrix y1 = net.forward(t1, t1.constant(x)).to_matrix();
  const Matrix y2 = net.forward(t2, t2.constant(x)).to_matrix();
  CHECK(y1 == y2);
}
