// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lrdm/autodiff.hpp"
#include "lrdm/diffusion.hpp"
#include "lrdm/matrix.hpp"
#include "lrdm/models.hpp"
#include "lrdm/rng.hpp"
#include "lrdm/schedule.hpp"

namespace lrdm {

/// Inclusive range training timesteps are drawn from.
struct TimestepWindow {
  int lo = 1;
  int hi = 1;
};

/// One forward-process draw per batch row.
struct NoisingDraw {
  std::vector<int> t;
  Matrix eps;
  Matrix x_t;
};

/// Draws t ~ U{window} for every row, then eps ~ N(0, I) row by row.
NoisingDraw draw_noising(const Schedule& s, const Matrix& x0, Rng& rng,
                         std::optional<TimestepWindow> window = std::nullopt);
/// Same, but with every row at timestep `t`.
NoisingDraw draw_noising_at(const Schedule& s, const Matrix& x0, int t, Rng& rng);

/// total = weight_applied * diffusion_term + lambda * kl_term. With per-row
/// timesteps the applied weight is the batch mean of the per-row weights and
/// diffusion_term is the weighted error normalized by it; under Simple
/// weighting diffusion_term is the plain batch-mean squared error.
struct LossBreakdown {
  Var loss;  // differentiable handle of `total`
  double total = 0.0;
  double diffusion_term = 0.0;
  double kl_term = 0.0;     // batch mean of the KL summed over repr dims
  double kl_per_dim = 0.0;  // kl_term / R
  double weight_applied = 1.0;
  double lambda = 0.0;
  std::vector<int> t;
};

/// 0.5 * sum_i (mu_i^2 + exp(logvar_i) - 1 - logvar_i), summed over the last
/// axis and averaged over leading (batch) rows.
Var kl_standard_normal(const Var& mu, const Var& logvar);
/// Per-row KL, shape [B].
Var kl_standard_normal_rows(const Var& mu, const Var& logvar);

/// Diffusion loss for a prediction already computed on `draw`.
LossBreakdown diffusion_loss_from_prediction(const Schedule& s, const NoisingDraw& draw,
                                             const Matrix& x0, const Var& prediction,
                                             Parameterization p, Weighting w);

struct LossOptions {
  std::optional<TimestepWindow> window;  // default: [1, T]
  std::span<const int> labels = {};      // class ids, when conditional
  bool train_mode = false;               // enables denoiser dropout
};

LossBreakdown dm_loss(Tape& tape, const Schedule& s, const DenoiserNet& net, const Matrix& x0,
                      Parameterization p, Weighting w, Rng& rng, const LossOptions& opt = {});

/// Representation-conditional loss on a fixed draw: unit-weighted x0 error
/// plus lambda times the posterior KL. `timestep_conditional` selects the
/// t-LRDM form where the encoder also sees the row's t.
LossBreakdown conditional_loss_on_draw(Tape& tape, const Schedule& s, const DenoiserNet& net,
                                       const ReprEncoder& enc, const Matrix& x0,
                                       const NoisingDraw& draw, const Matrix& repr_noise,
                                       double lambda, bool timestep_conditional,
                                       const LossOptions& opt, Rng* dropout_rng);

LossBreakdown lrdm_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                        const ReprEncoder& enc, const Matrix& x0, double lambda, Rng& rng,
                        const LossOptions& opt = {});
LossBreakdown t_lrdm_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                          const ReprEncoder& enc_t, const Matrix& x0, double lambda, Rng& rng,
                          const LossOptions& opt = {});
/// The LRDM objective restricted to t = T.
LossBreakdown lvae_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                        const ReprEncoder& enc, const Matrix& x0, double lambda, Rng& rng,
                        const LossOptions& opt = {});

// ---------------------------------------------------------------- bound terms

/// Mean of p(x_{t-1} | x_t) for a single point.
using MeanPredictor = std::function<Vec(std::span<const double> x_t, int t)>;

/// Reverse mean implied by a denoiser of parameterization `p` (optionally
/// with a fixed representation / label for a conditional net).
MeanPredictor mean_predictor(const DenoiserNet& net, const Schedule& s, Parameterization p,
                             std::optional<Vec> repr = std::nullopt,
                             std::optional<int> label = std::nullopt);

/// KL(N(m1, v1 I) || N(m2, v2 I)).
double gaussian_kl(std::span<const double> m1, double v1, std::span<const double> m2, double v2);

struct VlbTerms {
  double prior = 0.0;                  // L_T, closed form
  double decoder = 0.0;                // L_0 = E[-log N(x0; mu(x_1, 1), sigma_1^2 I)]
  double decoder_se = 0.0;
  std::vector<int> t;                  // 2..T
  std::vector<double> kl;              // L_{t-1} for each entry of t
  std::vector<double> kl_se;           // Monte Carlo standard errors
  double total() const;
};

/// Per-term decomposition of the variational bound for one data point. Each
/// L_{t-1} averages the analytic Gaussian KL over `n_mc` draws of x_t. L_0
/// uses sigma_1^2 = beta_1 under either variance choice (beta_tilde_1 = 0).
VlbTerms vlb_terms(const Schedule& s, const MeanPredictor& mean, std::span<const double> x0, Rng& rng,
                   int n_mc, ReverseVariance v = ReverseVariance::Beta);

}  // namespace lrdm
