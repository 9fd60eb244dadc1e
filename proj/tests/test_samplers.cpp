// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "lrdm/diffusion.hpp"
#include "lrdm/samplers.hpp"
#include "support.hpp"

using namespace lrdm;
using lrdm::test::max_abs_diff;
using lrdm::test::random_matrix;

namespace {

const Schedule kSched = Schedule::linear(100, 1e-3, 0.2);

std::vector<int> same_t(std::size_t n, int t) { return std::vector<int>(n, t); }

// Predicts the fixed clean batch x0 whatever it is given.
Predictor image_oracle(const Matrix& x0) {
  return [x0](const Matrix&, int, const Matrix*) { return x0; };
}

}  // namespace

TEST_CASE("ancestral step under noise and image forms agree") {
  const Matrix x_t = random_matrix(10, 3, 1);
  const Matrix eps_hat = random_matrix(10, 3, 2);
  const Matrix z = random_matrix(10, 3, 3);
  for (int t : {1, 2, 50, 100}) {
    CAPTURE(t);
    const auto ts = same_t(10, t);
    const Matrix x0_hat = prediction_to_x0(kSched, x_t, eps_hat, ts, Parameterization::Noise);
    const Matrix a = ancestral_step(kSched, x_t, t, eps_hat, Parameterization::Noise, z);
    const Matrix b = ancestral_step(kSched, x_t, t, x0_hat, Parameterization::Image, z);
    CHECK(max_abs_diff(a.data, b.data) < 1e-12);
  }
}

TEST_CASE("ancestral step with z = 0 and an oracle returns the posterior mean") {
  const Matrix x0 = random_matrix(4, 2, 4);
  const Matrix eps = random_matrix(4, 2, 5);
  const int t = 37;
  const Matrix x_t = q_sample(kSched, x0, same_t(4, t), eps);
  const Matrix step = ancestral_step(kSched, x_t, t, x0, Parameterization::Image, Matrix(4, 2));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto post = q_posterior(kSched, x_t.row(i), x0.row(i), t);
    CHECK(max_abs_diff(step.row(i), post.mean) < 1e-12);
  }
}

TEST_CASE("ancestral step variance equals beta_t") {
  const int t = 60;
  const std::size_t n = 100000;
  Matrix x_t(n, 1, 0.4);
  Matrix pred(n, 1, 0.1);
  Matrix z(n, 1);
  Rng rng(6);
  rng.fill_normal(z.data);
  const Matrix out = ancestral_step(kSched, x_t, t, pred, Parameterization::Noise, z);
  double m = 0.0, v = 0.0;
  for (double x : out.data) m += x;
  m /= static_cast<double>(n);
  for (double x : out.data) v += (x - m) * (x - m);
  v /= static_cast<double>(n - 1);
  const double beta = kSched.beta(t);
  CHECK(std::abs(v - beta) < 4.0 * beta * std::sqrt(2.0 / static_cast<double>(n - 1)));
}

TEST_CASE("DDIM step with the true noise stays on the forward decomposition") {
  const Matrix x0 = random_matrix(5, 2, 7);
  const Matrix eps = random_matrix(5, 2, 8);
  for (auto [t, t_prev] : {std::pair{80, 79}, {80, 40}, {10, 0}, {100, 1}}) {
    CAPTURE(t);
    const Matrix x_t = q_sample(kSched, x0, same_t(5, t), eps);
    const Matrix next = ddim_step(kSched, x_t, t, t_prev, eps, Parameterization::Noise);
    const Matrix expect = t_prev == 0 ? x0 : q_sample(kSched, x0, same_t(5, t_prev), eps);
    CHECK(max_abs_diff(next.data, expect.data) < 1e-12);
    // same step from the image form
    const Matrix via_x0 = ddim_step(kSched, x_t, t, t_prev, x0, Parameterization::Image);
    CHECK(max_abs_diff(via_x0.data, expect.data) < 1e-12);
    // a degenerate stride is the identity
    const Matrix same = ddim_step(kSched, x_t, t, t, eps, Parameterization::Noise);
    CHECK(max_abs_diff(same.data, x_t.data) < 1e-12);
    // determinism
    CHECK(ddim_step(kSched, x_t, t, t_prev, eps, Parameterization::Noise) == next);
  }
}

TEST_CASE("DDIM inversion with an oracle round-trips") {
  const Matrix x0 = random_matrix(6, 2, 9);
  const Predictor oracle = image_oracle(x0);
  for (int n : {100, 25, 7}) {
    SamplerConfig cfg;
    cfg.kind = SamplerKind::Ddim;
    cfg.steps = strided_steps(kSched.T(), n);
    const Matrix x_T = ddim_invert(kSched, oracle, Parameterization::Image, x0, cfg.steps);
    CHECK(x_T == ddim_invert(kSched, oracle, Parameterization::Image, x0, cfg.steps));
    const auto trace = sample_loop(kSched, oracle, Parameterization::Image, cfg, x_T);
    CHECK(max_abs_diff(trace.final.data, x0.data) < 1e-8);
  }
}

TEST_CASE("sample loop contracts") {
  const Matrix x0 = random_matrix(3, 2, 10);
  const Predictor oracle = image_oracle(x0);

  SUBCASE("single DDIM step from T returns the predicted x0") {
    SamplerConfig cfg;
    cfg.kind = SamplerKind::Ddim;
    cfg.steps = {kSched.T()};
    const auto trace = sample_loop(kSched, oracle, Parameterization::Image, cfg, random_matrix(3, 2, 11), nullptr, true);
    CHECK(max_abs_diff(trace.final.data, x0.data) < 1e-12);
    REQUIRE(trace.records.size() == 1);
    CHECK(trace.records[0].t == 0);
  }
  SUBCASE("trace length, ordering and final t") {
    for (auto kind : {SamplerKind::Ddim, SamplerKind::Ancestral}) {
      SamplerConfig cfg;
      cfg.kind = kind;
      if (kind == SamplerKind::Ddim) cfg.steps = strided_steps(kSched.T(), 20);
      const auto trace = sample_loop(kSched, oracle, Parameterization::Image, cfg, 3, 2, nullptr, true);
      CHECK(trace.records.size() == (kind == SamplerKind::Ddim ? 20u : 100u));
      for (std::size_t i = 1; i < trace.records.size(); ++i) {
        CHECK(trace.records[i].t < trace.records[i - 1].t);
      }
      CHECK(trace.records.back().t == 0);
      CHECK(trace.records.back().x_t == trace.final);
      for (double v : trace.final.data) CHECK(std::isfinite(v));
    }
  }
  SUBCASE("no noise at the final ancestral step") {
    SamplerConfig cfg;
    cfg.kind = SamplerKind::Ancestral;
    const auto trace = sample_loop(kSched, oracle, Parameterization::Image, cfg, 3, 2);
    // the t=1 step maps to its mean, which is x0 under the oracle
    CHECK(max_abs_diff(trace.final.data, x0.data) < 1e-12);
  }
  SUBCASE("seed determinism and seed sensitivity") {
    const Predictor noisy = [](const Matrix& x, int t, const Matrix*) {
      Matrix out = x;
      for (double& v : out.data) v = std::tanh(v) * (1.0 + 0.01 * t);
      return out;
    };
    for (auto kind : {SamplerKind::Ddim, SamplerKind::Ancestral}) {
      SamplerConfig cfg;
      cfg.kind = kind;
      cfg.seed = 42;
      const auto a = sample_loop(kSched, noisy, Parameterization::Noise, cfg, 50, 2, nullptr, true);
      const auto b = sample_loop(kSched, noisy, Parameterization::Noise, cfg, 50, 2, nullptr, true);
      CHECK(a.final == b.final);
      for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].x_t == b.records[i].x_t);
      cfg.seed = 43;
      CHECK(sample_loop(kSched, noisy, Parameterization::Noise, cfg, 50, 2).final != a.final);
    }
  }
  SUBCASE("representation held constant is recorded as such") {
    const Matrix r = random_matrix(3, 4, 12);
    const ReprProvider fixed = [&](int) { return r; };
    const ReprProvider moving = [&](int t) {
      Matrix m = r;
      m.data[0] += t;
      return m;
    };
    const Predictor uses_r = [](const Matrix& x, int, const Matrix* rep) {
      REQUIRE(rep != nullptr);
      return x;
    };
    SamplerConfig cfg;
    cfg.kind = SamplerKind::Ddim;
    CHECK(sample_loop(kSched, uses_r, Parameterization::Image, cfg, 3, 2, &fixed).repr_constant);
    CHECK_FALSE(sample_loop(kSched, uses_r, Parameterization::Image, cfg, 3, 2, &moving).repr_constant);
    const ReprProvider wrong = [&](int) { return random_matrix(2, 4, 13); };
    const Predictor checks = [](const Matrix& x, int, const Matrix* rep) {
      if (rep->rows != x.rows) throw std::invalid_argument("rows");
      return x;
    };
    CHECK_THROWS(sample_loop(kSched, checks, Parameterization::Image, cfg, 3, 2, &wrong));
  }
  SUBCASE("invalid step lists") {
    SamplerConfig cfg;
    cfg.kind = SamplerKind::Ddim;
    cfg.steps = {5, 3};
    CHECK_THROWS_AS(sample_loop(kSched, oracle, Parameterization::Image, cfg, 3, 2), std::invalid_argument);
    cfg.steps = {1, 101};
    CHECK_THROWS_AS(sample_loop(kSched, oracle, Parameterization::Image, cfg, 3, 2), std::invalid_argument);
    cfg.kind = SamplerKind::Ancestral;
    cfg.steps = strided_steps(100, 10);
    CHECK_THROWS_AS(sample_loop(kSched, oracle, Parameterization::Image, cfg, 3, 2), std::invalid_argument);
  }
}

TEST_CASE("strided steps") {
  const auto s = strided_steps(100, 10);
  CHECK(s.size() == 10);
  CHECK(s.front() == 10);
  CHECK(s.back() == 100);
  CHECK(strided_steps(100, 100).front() == 1);
  CHECK_THROWS(strided_steps(100, 0));
  CHECK_THROWS(strided_steps(100, 101));
}

TEST_CASE("trace CSV rows") {
  const Matrix x0 = random_matrix(2, 2, 14);
  SamplerConfig cfg;
  cfg.kind = SamplerKind::Ddim;
  cfg.steps = {50, 100};
  const auto trace = sample_loop(kSched, image_oracle(x0), Parameterization::Image, cfg, 2, 2, nullptr, true);
  std::ostringstream os;
  write_trace_csv(os, trace);
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].rfind("0,50,", 0) == 0);
  CHECK(lines[3].rfind("1,0,", 0) == 0);
  CHECK(std::count(lines[0].begin(), lines[0].end(), ',') == 5);
}
