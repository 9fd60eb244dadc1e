// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "lrdm/diffusion.hpp"
#include "lrdm/rng.hpp"
#include "support.hpp"

using namespace lrdm;
using lrdm::test::max_abs_diff;

namespace {
const Schedule kToy = Schedule::linear(3, 0.1, 0.3);

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}
}  // namespace

TEST_CASE("q_sample") {
  const Vec x0{0.7, -1.3};
  const Vec zero{0.0, 0.0};
  const auto ns = q_sample(kToy, x0, 2, zero);
  CHECK(ns.x_t[0] == doctest::Approx(std::sqrt(0.72) * 0.7).epsilon(1e-14));
  CHECK(ns.t == 2);

  const auto one = q_sample(kToy, Vec{1.0}, 3, Vec{1.0});
  CHECK(one.x_t[0] == doctest::Approx(std::sqrt(0.504) + std::sqrt(0.496)).epsilon(1e-14));
  CHECK(one.x_t[0] == doctest::Approx(1.4142022484383143).epsilon(1e-13));
  CHECK(one.eps == Vec{1.0});

  CHECK_THROWS_AS(q_sample(kToy, x0, 2, Vec{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(q_sample(kToy, x0, 4, zero), std::out_of_range);
  CHECK_THROWS_AS(q_sample(kToy, x0, 0, zero), std::out_of_range);
}

TEST_CASE("q_sample matches the marginal over 1e5 draws") {
  const Schedule s = Schedule::linear(100, 1e-3, 0.2);
  Rng rng(5);
  const int t = 30;
  const Vec x0{1.5};
  std::vector<double> xs(100000);
  Vec eps(1);
  for (double& x : xs) {
    rng.fill_normal(eps);
    x = q_sample(s, x0, t, eps).x_t[0];
  }
  const auto m = moments(xs);
  const double var = 1.0 - s.alpha_bar(t);
  const double n = static_cast<double>(xs.size());
  CHECK(std::abs(m.mean - std::sqrt(s.alpha_bar(t)) * 1.5) < 4.0 * std::sqrt(var / n));
  CHECK(std::abs(m.var - var) < 4.0 * var * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("q_posterior") {
  const auto p0 = q_posterior(kToy, Vec{0.0, 0.0}, Vec{0.0, 0.0}, 2);
  CHECK(p0.mean == Vec{0.0, 0.0});
  CHECK(p0.var == kToy.beta_tilde(2));

  // coefficient sum at t=2 is not 1
  const auto p1 = q_posterior(kToy, Vec{1.0}, Vec{1.0}, 2);
  const double expected = (std::sqrt(0.9) * 0.2 + std::sqrt(0.8) * 0.1) / 0.28;
  CHECK(p1.mean[0] == doctest::Approx(expected).epsilon(1e-14));
  CHECK(p1.mean[0] == doctest::Approx(0.9970692096789083).epsilon(1e-13));

  const auto first = q_posterior(kToy, Vec{0.4}, Vec{-0.2}, 1);
  CHECK(first.mean == Vec{-0.2});
  CHECK(first.var == 0.0);

  // variance ignores x_t and x0
  CHECK(q_posterior(kToy, Vec{5.0}, Vec{-3.0}, 3).var == kToy.beta_tilde(3));
}

TEST_CASE("posterior mean averaged over x_t equals E[x_{t-1} | x0]") {
  const Schedule s = Schedule::linear(100, 1e-3, 0.2);
  Rng rng(9);
  const int t = 40;
  const Vec x0{-0.8};
  std::vector<double> means(100000);
  Vec eps(1);
  for (double& m : means) {
    rng.fill_normal(eps);
    const auto xt = q_sample(s, x0, t, eps).x_t;
    m = q_posterior(s, xt, x0, t).mean[0];
  }
  const auto mm = moments(means);
  const double target = std::sqrt(s.alpha_bar(t - 1)) * x0[0];
  CHECK(std::abs(mm.mean - target) < 4.0 * std::sqrt(mm.var / static_cast<double>(means.size())));
}

TEST_CASE("chain of single steps matches the jump distribution") {
  const Schedule s = Schedule::linear(100, 1e-3, 0.2);
  Rng rng(13);
  const int t = 25;
  const double x0 = 1.2;
  const std::size_t n = 100000;
  std::vector<double> chain(n), jump(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = x0;
    for (int k = 1; k <= t; ++k) x = std::sqrt(s.alpha(k)) * x + std::sqrt(s.beta(k)) * rng.normal();
    chain[i] = x;
    jump[i] = std::sqrt(s.alpha_bar(t)) * x0 + std::sqrt(1 - s.alpha_bar(t)) * rng.normal();
  }
  const auto a = moments(chain);
  const auto b = moments(jump);
  const double dn = static_cast<double>(n);
  CHECK(std::abs(a.mean - b.mean) < 4.0 * std::sqrt(a.var / dn + b.var / dn));
  const double se_var = std::sqrt(2.0 * a.var * a.var / (dn - 1) + 2.0 * b.var * b.var / (dn - 1));
  CHECK(std::abs(a.var - b.var) < 4.0 * se_var);
}

TEST_CASE("parameterization conversions") {
  Rng rng(17);
  const Schedule s = Schedule::linear(100, 1e-3, 0.2);
  for (int t : {1, 2, 17, 50, 100}) {
    CAPTURE(t);
    Vec x_t(3), x0(3), eps(3);
    rng.fill_normal(x_t);
    rng.fill_normal(x0);
    rng.fill_normal(eps);

    // round trip x0 -> eps -> x0
    const Vec e = x0_to_eps(s, x_t, x0, t);
    CHECK(max_abs_diff(eps_to_x0(s, x_t, e, t), x0) < 1e-12);

    // true eps recovers x0
    const Vec xt_true = q_sample(s, x0, t, eps).x_t;
    CHECK(max_abs_diff(eps_to_x0(s, xt_true, eps, t), x0) < 1e-12);

    // independent formula
    const double ab = s.alpha_bar(t);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(eps_to_x0(s, x_t, eps, t)[i] ==
            doctest::Approx((x_t[i] - std::sqrt(1 - ab) * eps[i]) / std::sqrt(ab)).epsilon(1e-13));
    }

    // both routes to the reverse mean agree
    const Vec x0_hat = eps_to_x0(s, x_t, eps, t);
    CHECK(max_abs_diff(eps_to_mu(s, x_t, eps, t), x0_to_mu(s, x_t, x0_hat, t)) < 1e-12);
    CHECK(max_abs_diff(mu_to_x0(s, x_t, x0_to_mu(s, x_t, x0_hat, t), t), x0_hat) < 1e-9);

    // eps_hat = 0 -> x_t / sqrt(alpha_t)
    const Vec mu0 = eps_to_mu(s, x_t, Vec(3, 0.0), t);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(mu0[i] == doctest::Approx(x_t[i] / std::sqrt(s.alpha(t))).epsilon(1e-14));
    }
  }

  // toy spot value for eps_to_mu at t=2
  const Vec mu = eps_to_mu(kToy, Vec{0.5}, Vec{0.25}, 2);
  CHECK(mu[0] == doctest::Approx((0.5 - 0.2 / std::sqrt(0.28) * 0.25) / std::sqrt(0.8)).epsilon(1e-14));
}

TEST_CASE("prediction conversions cover every parameterization") {
  const Schedule s = Schedule::linear(100, 1e-3, 0.2);
  Rng rng(21);
  Vec x0(2), eps(2);
  rng.fill_normal(x0);
  rng.fill_normal(eps);
  for (int t : {2, 60}) {
    const Vec xt = q_sample(s, x0, t, eps).x_t;
    for (auto p : {Parameterization::Noise, Parameterization::Image, Parameterization::Mean}) {
      const Vec target = target_for(s, xt, x0, eps, t, p);
      CHECK(max_abs_diff(prediction_to_x0(s, xt, target, t, p), x0) < 1e-9);
      CHECK(max_abs_diff(prediction_to_eps(s, xt, target, t, p), eps) < 1e-9);
    }
  }
}
