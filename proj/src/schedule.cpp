// SPDX-License-Identifier: Apache-2.0
#include "lrdm/schedule.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <stdexcept>

namespace lrdm {

std::string_view to_string(Parameterization p) {
  switch (p) {
    case Parameterization::Noise: return "noise";
    case Parameterization::Image: return "image";
    case Parameterization::Mean: return "mean";
  }
  return "?";
}

std::string_view to_string(Weighting w) { return w == Weighting::Vlb ? "vlb" : "simple"; }

Parameterization parse_parameterization(std::string_view s) {
  if (s == "noise" || s == "eps") return Parameterization::Noise;
  if (s == "image" || s == "x0") return Parameterization::Image;
  if (s == "mean" || s == "mu") return Parameterization::Mean;
  throw std::invalid_argument("unknown parameterization '" + std::string(s) +
                              "' (expected noise|image|mean)");
}

Weighting parse_weighting(std::string_view s) {
  if (s == "vlb") return Weighting::Vlb;
  if (s == "simple") return Weighting::Simple;
  throw std::invalid_argument("unknown weighting '" + std::string(s) + "' (expected vlb|simple)");
}

Schedule Schedule::linear(int T, double beta1, double betaT) {
  if (T < 2) throw std::invalid_argument("Schedule::linear: T must be >= 2, got " + std::to_string(T));
  if (!(beta1 > 0.0) || !(beta1 <= betaT) || !(betaT < 1.0)) {
    throw std::invalid_argument("Schedule::linear: need 0 < beta1 <= betaT < 1");
  }
  Schedule s;
  s.T_ = T;
  s.beta1_ = beta1;
  s.betaT_ = betaT;
  const auto n = static_cast<std::size_t>(T) + 1;
  s.beta_.assign(n, 0.0);
  s.alpha_bar_.assign(n, 1.0);
  s.beta_tilde_.assign(n, 0.0);
  const double denom = static_cast<double>(T - 1);
  for (int t = 1; t <= T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s.beta_[i] = (static_cast<double>(T - t) * beta1 + static_cast<double>(t - 1) * betaT) / denom;
    s.alpha_bar_[i] = s.alpha_bar_[i - 1] * (1.0 - s.beta_[i]);
    s.beta_tilde_[i] = (1.0 - s.alpha_bar_[i - 1]) / (1.0 - s.alpha_bar_[i]) * s.beta_[i];
  }
  return s;
}

std::size_t Schedule::check(int t) const {
  if (t < 0 || t > T_) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(T_) + "]");
  }
  return static_cast<std::size_t>(t);
}

double Schedule::snr(int t) const {
  const double ab = alpha_bar(t);
  if (t == 0) return std::numeric_limits<double>::infinity();
  return ab / (1.0 - ab);
}

std::pair<double, double> default_linear_endpoints(int T) {
  const double f = 1000.0 / static_cast<double>(T);
  return {1e-4 * f, 0.02 * f};
}

double loss_weight(const Schedule& s, int t, Parameterization p, Weighting w, ReverseVariance v) {
  if (t < 1 || t > s.T()) {
    throw std::out_of_range("loss_weight: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.T()) + "]");
  }
  if (w == Weighting::Simple) return 1.0;
  const double sig2 = s.sigma2(t, v);
  const double beta = s.beta(t);
  const double alpha = s.alpha(t);
  const double ab = s.alpha_bar(t);
  switch (p) {
    case Parameterization::Mean:
      return 1.0 / (2.0 * sig2);
    case Parameterization::Noise:
      return beta * beta / (2.0 * sig2 * alpha * (1.0 - ab));
    case Parameterization::Image:
      return ab * beta * beta / (2.0 * sig2 * alpha * (1.0 - ab) * (1.0 - ab));
  }
  return 0.0;
}

std::vector<ScheduleRow> dump_schedule(const Schedule& s) {
  std::vector<ScheduleRow> rows;
  rows.reserve(static_cast<std::size_t>(s.T()));
  for (int t = 1; t <= s.T(); ++t) {
    rows.push_back({t, s.beta(t), s.alpha_bar(t), s.beta_tilde(t), s.snr(t),
                    loss_weight(s, t, Parameterization::Noise, Weighting::Vlb),
                    loss_weight(s, t, Parameterization::Image, Weighting::Vlb),
                    loss_weight(s, t, Parameterization::Mean, Weighting::Vlb)});
  }
  return rows;
}

void write_schedule_csv(std::ostream& os, const Schedule& s) {
  os << "t,beta,alpha_bar,beta_tilde,snr,w_vlb_noise,w_vlb_image,w_vlb_mean\n";
  for (const auto& r : dump_schedule(s)) {
    os << fmt::format("{},{},{},{},{},{},{},{}\n", r.t, r.beta,
                      r.alpha_bar, r.beta_tilde, r.snr, r.w_vlb_noise, r.w_vlb_image, r.w_vlb_mean);
  }
}

}  // namespace lrdm
