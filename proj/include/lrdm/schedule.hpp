// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lrdm {

/// What the denoiser predicts.
enum class Parameterization { Noise, Image, Mean };
/// Unit weights (reweighted objective) or the variational-bound prefactors.
enum class Weighting { Vlb, Simple };
/// Which variance the reverse transitions use.
enum class ReverseVariance { Beta, BetaTilde };

std::string_view to_string(Parameterization p);
std::string_view to_string(Weighting w);
Parameterization parse_parameterization(std::string_view s);
Weighting parse_weighting(std::string_view s);

/// Timestep coefficients of a linear variance schedule. All arrays are
/// indexed by t = 0..T; index 0 holds the clean-data convention
/// (alpha_bar[0] = 1, beta[0] = 0).
class Schedule {
 public:
  /// Empty schedule (T = 0); only useful as a placeholder before assignment.
  Schedule() = default;
  static Schedule linear(int T, double beta1, double betaT);

  int T() const { return T_; }
  double beta_start() const { return beta1_; }
  double beta_end() const { return betaT_; }

  double beta(int t) const { return beta_.at(check(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(check(t)); }
  double beta_tilde(int t) const { return beta_tilde_.at(check(t)); }
  /// Reverse-process variance; fixed to beta_t unless BetaTilde is asked for.
  double sigma2(int t, ReverseVariance v = ReverseVariance::Beta) const {
    return v == ReverseVariance::Beta ? beta(t) : beta_tilde(t);
  }
  double snr(int t) const;

 private:
  std::size_t check(int t) const;

  int T_ = 0;
  double beta1_ = 0.0;
  double betaT_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> beta_tilde_;
};

/// Standard linear endpoints (1e-4, 0.02) at T=1000, rescaled by 1000/T so
/// that shorter chains still end close to pure noise.
std::pair<double, double> default_linear_endpoints(int T);

/// Multiplicative weight on the squared error of parameterization `p` at
/// timestep t. Simple weighting is 1 everywhere.
double loss_weight(const Schedule& s, int t, Parameterization p, Weighting w,
                   ReverseVariance v = ReverseVariance::Beta);

struct ScheduleRow {
  int t;
  double beta;
  double alpha_bar;
  double beta_tilde;
  double snr;
  double w_vlb_noise;
  double w_vlb_image;
  double w_vlb_mean;
};

std::vector<ScheduleRow> dump_schedule(const Schedule& s);
/// Header `t,beta,alpha_bar,beta_tilde,snr,w_vlb_noise,w_vlb_image,w_vlb_mean`
/// followed by one row per timestep at full precision.
void write_schedule_csv(std::ostream& os, const Schedule& s);

}  // namespace lrdm
