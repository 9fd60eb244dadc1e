// SPDX-License-Identifier: Apache-2.0
#include "lrdm/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lrdm {

namespace {

void check_t(const Schedule& s, int t, const char* op) {
  if (t < 1 || t > s.T()) {
    throw std::out_of_range(std::string(op) + ": timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(s.T()) + "]");
  }
}

void check_dims(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

// out = ca * a + cb * b
Vec combine(double ca, std::span<const double> a, double cb, std::span<const double> b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = ca * a[i] + cb * b[i];
  return out;
}

void check_rows(const Matrix& a, const Matrix& b, std::span<const int> t, const char* op) {
  if (!a.same_shape(b) || t.size() != a.rows) {
    throw std::invalid_argument(std::string(op) + ": batch shape mismatch");
  }
}

template <class RowFn>
Matrix rowwise(const Matrix& a, RowFn fn) {
  Matrix out(a.rows, a.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    Vec v = fn(r);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

NoisySample q_sample(const Schedule& s, std::span<const double> x0, int t,
                     std::span<const double> eps) {
  check_t(s, t, "q_sample");
  check_dims(x0, eps, "q_sample");
  const double ab = s.alpha_bar(t);
  return {combine(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps), t, Vec(eps.begin(), eps.end())};
}

Posterior q_posterior(const Schedule& s, std::span<const double> x_t, std::span<const double> x0,
                      int t) {
  check_t(s, t, "q_posterior");
  check_dims(x_t, x0, "q_posterior");
  if (t == 1) return {Vec(x0.begin(), x0.end()), 0.0};
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * s.beta(t) / (1.0 - ab);
  const double ct = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
  return {combine(c0, x0, ct, x_t), s.beta_tilde(t)};
}

Vec eps_to_x0(const Schedule& s, std::span<const double> x_t, std::span<const double> eps_hat,
              int t) {
  check_t(s, t, "eps_to_x0");
  check_dims(x_t, eps_hat, "eps_to_x0");
  const double ab = s.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  return combine(inv, x_t, -std::sqrt(1.0 - ab) * inv, eps_hat);
}

Vec x0_to_eps(const Schedule& s, std::span<const double> x_t, std::span<const double> x0_hat,
              int t) {
  check_t(s, t, "x0_to_eps");
  check_dims(x_t, x0_hat, "x0_to_eps");
  const double ab = s.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  return combine(inv, x_t, -std::sqrt(ab) * inv, x0_hat);
}

Vec x0_to_mu(const Schedule& s, std::span<const double> x_t, std::span<const double> x0_hat,
             int t) {
  return q_posterior(s, x_t, x0_hat, t).mean;
}

Vec eps_to_mu(const Schedule& s, std::span<const double> x_t, std::span<const double> eps_hat,
              int t) {
  check_t(s, t, "eps_to_mu");
  check_dims(x_t, eps_hat, "eps_to_mu");
  const double inv = 1.0 / std::sqrt(s.alpha(t));
  return combine(inv, x_t, -inv * s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)), eps_hat);
}

Vec mu_to_x0(const Schedule& s, std::span<const double> x_t, std::span<const double> mu_hat,
             int t) {
  check_t(s, t, "mu_to_x0");
  check_dims(x_t, mu_hat, "mu_to_x0");
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * s.beta(t) / (1.0 - ab);
  const double ct = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
  return combine(1.0 / c0, mu_hat, -ct / c0, x_t);
}

Vec prediction_to_x0(const Schedule& s, std::span<const double> x_t,
                     std::span<const double> prediction, int t, Parameterization p) {
  switch (p) {
    case Parameterization::Image: check_dims(x_t, prediction, "prediction_to_x0");
      return Vec(prediction.begin(), prediction.end());
    case Parameterization::Noise: return eps_to_x0(s, x_t, prediction, t);
    case Parameterization::Mean: return mu_to_x0(s, x_t, prediction, t);
  }
  return {};
}

Vec prediction_to_eps(const Schedule& s, std::span<const double> x_t,
                      std::span<const double> prediction, int t, Parameterization p) {
  switch (p) {
    case Parameterization::Noise: check_dims(x_t, prediction, "prediction_to_eps");
      return Vec(prediction.begin(), prediction.end());
    case Parameterization::Image: return x0_to_eps(s, x_t, prediction, t);
    case Parameterization::Mean: return x0_to_eps(s, x_t, mu_to_x0(s, x_t, prediction, t), t);
  }
  return {};
}

Vec target_for(const Schedule& s, std::span<const double> x_t, std::span<const double> x0,
               std::span<const double> eps, int t, Parameterization p) {
  switch (p) {
    case Parameterization::Noise: return Vec(eps.begin(), eps.end());
    case Parameterization::Image: return Vec(x0.begin(), x0.end());
    case Parameterization::Mean: return x0_to_mu(s, x_t, x0, t);
  }
  return {};
}

Matrix q_sample(const Schedule& s, const Matrix& x0, std::span<const int> t, const Matrix& eps) {
  check_rows(x0, eps, t, "q_sample");
  return rowwise(x0, [&](std::size_t r) { return q_sample(s, x0.row(r), t[r], eps.row(r)).x_t; });
}

Matrix prediction_to_x0(const Schedule& s, const Matrix& x_t, const Matrix& prediction,
                        std::span<const int> t, Parameterization p) {
  check_rows(x_t, prediction, t, "prediction_to_x0");
  return rowwise(x_t, [&](std::size_t r) {
    return prediction_to_x0(s, x_t.row(r), prediction.row(r), t[r], p);
  });
}

Matrix prediction_to_eps(const Schedule& s, const Matrix& x_t, const Matrix& prediction,
                         std::span<const int> t, Parameterization p) {
  check_rows(x_t, prediction, t, "prediction_to_eps");
  return rowwise(x_t, [&](std::size_t r) {
    return prediction_to_eps(s, x_t.row(r), prediction.row(r), t[r], p);
  });
}

Matrix target_for(const Schedule& s, const Matrix& x_t, const Matrix& x0, const Matrix& eps,
                  std::span<const int> t, Parameterization p) {
  check_rows(x_t, x0, t, "target_for");
  check_rows(x_t, eps, t, "target_for");
  return rowwise(x_t, [&](std::size_t r) {
    return target_for(s, x_t.row(r), x0.row(r), eps.row(r), t[r], p);
  });
}

}  // namespace lrdm
