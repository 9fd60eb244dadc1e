// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "lrdm/matrix.hpp"
#include "lrdm/schedule.hpp"

namespace lrdm {

using Vec = std::vector<double>;

struct NoisySample {
  Vec x_t;
  int t = 0;
  Vec eps;
};

struct Posterior {
  Vec mean;
  double var = 0.0;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
NoisySample q_sample(const Schedule& s, std::span<const double> x0, int t,
                     std::span<const double> eps);

/// Mean and variance of q(x_{t-1} | x_t, x0). At t=1 the mean is x0 and the
/// variance 0 (abar_0 = 1).
Posterior q_posterior(const Schedule& s, std::span<const double> x_t, std::span<const double> x0,
                      int t);

Vec eps_to_x0(const Schedule& s, std::span<const double> x_t, std::span<const double> eps_hat, int t);
Vec x0_to_eps(const Schedule& s, std::span<const double> x_t, std::span<const double> x0_hat, int t);
/// Reverse-transition mean from an x0 prediction (the posterior mean).
Vec x0_to_mu(const Schedule& s, std::span<const double> x_t, std::span<const double> x0_hat, int t);
/// (1/sqrt(alpha_t)) (x_t - beta_t / sqrt(1 - abar_t) eps_hat)
Vec eps_to_mu(const Schedule& s, std::span<const double> x_t, std::span<const double> eps_hat, int t);
/// Inverse of x0_to_mu.
Vec mu_to_x0(const Schedule& s, std::span<const double> x_t, std::span<const double> mu_hat, int t);

/// Convert a network output in parameterization `p` to the implied x0 / eps.
Vec prediction_to_x0(const Schedule& s, std::span<const double> x_t,
                     std::span<const double> prediction, int t, Parameterization p);
Vec prediction_to_eps(const Schedule& s, std::span<const double> x_t,
                      std::span<const double> prediction, int t, Parameterization p);
/// The quantity a network of parameterization `p` should output, given the
/// true x0 and eps behind x_t.
Vec target_for(const Schedule& s, std::span<const double> x_t, std::span<const double> x0,
               std::span<const double> eps, int t, Parameterization p);

// Row-wise batch versions; `t` holds one timestep per row.
Matrix q_sample(const Schedule& s, const Matrix& x0, std::span<const int> t, const Matrix& eps);
Matrix prediction_to_x0(const Schedule& s, const Matrix& x_t, const Matrix& prediction,
                        std::span<const int> t, Parameterization p);
Matrix prediction_to_eps(const Schedule& s, const Matrix& x_t, const Matrix& prediction,
                         std::span<const int> t, Parameterization p);
Matrix target_for(const Schedule& s, const Matrix& x_t, const Matrix& x0, const Matrix& eps,
                  std::span<const int> t, Parameterization p);

}  // namespace lrdm
