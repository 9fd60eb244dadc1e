// SPDX-License-Identifier: Apache-2.0
#include "lrdm/objectives.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lrdm {

NoisingDraw draw_noising(const Schedule& s, const Matrix& x0, Rng& rng,
                         std::optional<TimestepWindow> window) {
  const TimestepWindow w = window.value_or(TimestepWindow{1, s.T()});
  if (w.lo < 1 || w.hi > s.T() || w.lo > w.hi) {
    throw std::invalid_argument("draw_noising: window [" + std::to_string(w.lo) + ", " +
                                std::to_string(w.hi) + "] not within [1, T]");
  }
  NoisingDraw d;
  d.t.resize(x0.rows);
  for (int& t : d.t) t = rng.uniform_int(w.lo, w.hi);
  d.eps = Matrix(x0.rows, x0.cols);
  rng.fill_normal(d.eps.data);
  d.x_t = q_sample(s, x0, d.t, d.eps);
  return d;
}

NoisingDraw draw_noising_at(const Schedule& s, const Matrix& x0, int t, Rng& rng) {
  return draw_noising(s, x0, rng, TimestepWindow{t, t});
}

Var kl_standard_normal_rows(const Var& mu, const Var& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw std::invalid_argument("kl_standard_normal: shape mismatch " + shape_str(mu.shape()) +
                                " vs " + shape_str(logvar.shape()));
  }
  return sum_last((square(mu) + exp(logvar) - logvar - 1.0) * 0.5);
}

Var kl_standard_normal(const Var& mu, const Var& logvar) {
  return mean(kl_standard_normal_rows(mu, logvar));
}

LossBreakdown diffusion_loss_from_prediction(const Schedule& s, const NoisingDraw& draw,
                                             const Matrix& x0, const Var& prediction,
                                             Parameterization p, Weighting w) {
  Tape& tape = *prediction.tape();
  const Matrix target = target_for(s, draw.x_t, x0, draw.eps, draw.t, p);
  if (prediction.shape() != Shape{target.rows, target.cols}) {
    throw std::invalid_argument("diffusion loss: prediction shape " + shape_str(prediction.shape()) +
                                " vs target [" + std::to_string(target.rows) + "," +
                                std::to_string(target.cols) + "]");
  }
  Tensor weights({draw.t.size()});
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < draw.t.size(); ++i) {
    weights.values()[i] = loss_weight(s, draw.t[i], p, w);
    weight_sum += weights.values()[i];
  }
  Var per_row = sum_last(square(prediction - tape.constant(target)));
  Var loss = (w == Weighting::Simple) ? mean(per_row)
                                      : mean(per_row * tape.constant(std::move(weights)));
  LossBreakdown out;
  out.loss = loss;
  out.weight_applied = w == Weighting::Simple ? 1.0 : weight_sum / static_cast<double>(draw.t.size());
  out.diffusion_term = loss.item() / out.weight_applied;
  out.total = out.weight_applied * out.diffusion_term;
  out.t = draw.t;
  return out;
}

LossBreakdown dm_loss(Tape& tape, const Schedule& s, const DenoiserNet& net, const Matrix& x0,
                      Parameterization p, Weighting w, Rng& rng, const LossOptions& opt) {
  if (net.config().repr_dim > 0) {
    throw std::invalid_argument("dm_loss: net is configured for representation conditioning");
  }
  const NoisingDraw draw = draw_noising(s, x0, rng, opt.window);
  DenoiserInput in{tape.constant(draw.x_t), draw.t, std::nullopt, opt.labels};
  Var pred = net.forward(tape, in, opt.train_mode, &rng);
  return diffusion_loss_from_prediction(s, draw, x0, pred, p, w);
}

LossBreakdown conditional_loss_on_draw(Tape& tape, const Schedule& s, const DenoiserNet& net,
                                       const ReprEncoder& enc, const Matrix& x0,
                                       const NoisingDraw& draw, const Matrix& repr_noise,
                                       double lambda, bool timestep_conditional,
                                       const LossOptions& opt, Rng* dropout_rng) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  if (net.config().repr_dim == 0 || net.config().repr_dim != enc.config().repr_dim) {
    throw std::invalid_argument("conditional loss: denoiser repr_dim " +
                                std::to_string(net.config().repr_dim) + " vs encoder repr_dim " +
                                std::to_string(enc.config().repr_dim));
  }
  if (timestep_conditional != enc.config().timestep_conditional) {
    throw std::invalid_argument(timestep_conditional
                                    ? "t-LRDM loss needs a timestep-conditional encoder"
                                    : "LRDM loss needs an encoder that is not timestep-conditional");
  }
  Var z0 = tape.constant(x0);
  const std::span<const int> enc_t =
      timestep_conditional ? std::span<const int>(draw.t) : std::span<const int>{};
  const std::span<const int> enc_labels =
      enc.config().num_classes > 0 ? opt.labels : std::span<const int>{};
  GaussianHeads heads = enc.encode(tape, z0, enc_t, enc_labels);
  Var r = reparameterize(heads.mu, heads.logvar, tape.constant(repr_noise));
  DenoiserInput in{tape.constant(draw.x_t), draw.t, r, opt.labels};
  Var pred = net.forward(tape, in, opt.train_mode, dropout_rng);

  LossBreakdown out =
      diffusion_loss_from_prediction(s, draw, x0, pred, Parameterization::Image, Weighting::Simple);
  Var kl = kl_standard_normal(heads.mu, heads.logvar);
  out.loss = out.loss + kl * lambda;
  out.kl_term = kl.item();
  out.kl_per_dim = out.kl_term / static_cast<double>(enc.config().repr_dim);
  out.lambda = lambda;
  out.total = out.weight_applied * out.diffusion_term + lambda * out.kl_term;
  return out;
}

namespace {

LossBreakdown conditional_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                               const ReprEncoder& enc, const Matrix& x0, double lambda, Rng& rng,
                               const LossOptions& opt, bool timestep_conditional) {
  const NoisingDraw draw = draw_noising(s, x0, rng, opt.window);
  Matrix noise(x0.rows, enc.config().repr_dim);
  rng.fill_normal(noise.data);
  return conditional_loss_on_draw(tape, s, net, enc, x0, draw, noise, lambda, timestep_conditional,
                                  opt, &rng);
}

}  // namespace

LossBreakdown lrdm_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                        const ReprEncoder& enc, const Matrix& x0, double lambda, Rng& rng,
                        const LossOptions& opt) {
  return conditional_loss(tape, s, net, enc, x0, lambda, rng, opt, false);
}

LossBreakdown t_lrdm_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                          const ReprEncoder& enc_t, const Matrix& x0, double lambda, Rng& rng,
                          const LossOptions& opt) {
  return conditional_loss(tape, s, net, enc_t, x0, lambda, rng, opt, true);
}

LossBreakdown lvae_loss(Tape& tape, const Schedule& s, const DenoiserNet& net,
                        const ReprEncoder& enc, const Matrix& x0, double lambda, Rng& rng,
                        const LossOptions& opt) {
  LossOptions fixed = opt;
  fixed.window = TimestepWindow{s.T(), s.T()};
  return conditional_loss(tape, s, net, enc, x0, lambda, rng, fixed, false);
}

// ---------------------------------------------------------------- bound terms

MeanPredictor mean_predictor(const DenoiserNet& net, const Schedule& s, Parameterization p,
                             std::optional<Vec> repr, std::optional<int> label) {
  return [&net, &s, p, repr = std::move(repr), label](std::span<const double> x_t, int t) {
    Tape tape(false);
    const int ts[1] = {t};
    std::vector<int> labels;
    if (label) labels.push_back(*label);
    DenoiserInput in{tape.constant(Tensor({1, x_t.size()}, Vec(x_t.begin(), x_t.end()))), ts,
                     std::nullopt, labels};
    if (repr) in.repr = tape.constant(Tensor({1, repr->size()}, *repr));
    const Var out = net.forward(tape, in);
    const auto pred = out.values();
    const Vec x0 = prediction_to_x0(s, x_t, pred, t, p);
    return x0_to_mu(s, x_t, x0, t);
  };
}

double gaussian_kl(std::span<const double> m1, double v1, std::span<const double> m2, double v2) {
  if (m1.size() != m2.size()) throw std::invalid_argument("gaussian_kl: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i) sq += (m1[i] - m2[i]) * (m1[i] - m2[i]);
  const double d = static_cast<double>(m1.size());
  return 0.5 * (d * (std::log(v2 / v1) + v1 / v2 - 1.0) + sq / v2);
}

double VlbTerms::total() const {
  double sum = prior + decoder;
  for (double k : kl) sum += k;
  return sum;
}

VlbTerms vlb_terms(const Schedule& s, const MeanPredictor& mean, std::span<const double> x0, Rng& rng,
                   int n_mc, ReverseVariance v) {
  if (n_mc < 1) throw std::invalid_argument("vlb_terms: n_mc must be >= 1");
  const std::size_t dim = x0.size();
  const double n = static_cast<double>(n_mc);
  VlbTerms out;

  const double abT = s.alpha_bar(s.T());
  Vec mT(dim), zero(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) mT[i] = std::sqrt(abT) * x0[i];
  out.prior = gaussian_kl(mT, 1.0 - abT, zero, 1.0);

  Vec eps(dim);
  auto mc_mean_se = [n](double sum, double sum_sq) {
    const double m = sum / n;
    const double var = n > 1 ? (sum_sq - n * m * m) / (n - 1.0) : 0.0;
    return std::pair{m, std::sqrt(std::max(var, 0.0) / n)};
  };

  {
    const double var1 = s.beta(1);
    double acc = 0.0, acc2 = 0.0;
    for (int k = 0; k < n_mc; ++k) {
      rng.fill_normal(eps);
      const Vec x1 = q_sample(s, x0, 1, eps).x_t;
      const Vec mu = mean(x1, 1);
      double nll = 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi * var1);
      for (std::size_t i = 0; i < dim; ++i) nll += 0.5 * (x0[i] - mu[i]) * (x0[i] - mu[i]) / var1;
      acc += nll;
      acc2 += nll * nll;
    }
    std::tie(out.decoder, out.decoder_se) = mc_mean_se(acc, acc2);
  }

  for (int t = 2; t <= s.T(); ++t) {
    const double var_p = s.sigma2(t, v);
    double acc = 0.0, acc2 = 0.0;
    for (int k = 0; k < n_mc; ++k) {
      rng.fill_normal(eps);
      const Vec xt = q_sample(s, x0, t, eps).x_t;
      const Posterior q = q_posterior(s, xt, x0, t);
      const double kl = gaussian_kl(q.mean, q.var, mean(xt, t), var_p);
      acc += kl;
      acc2 += kl * kl;
    }
    const auto [m, se] = mc_mean_se(acc, acc2);
    out.t.push_back(t);
    out.kl.push_back(m);
    out.kl_se.push_back(se);
  }
  return out;
}

}  // namespace lrdm
