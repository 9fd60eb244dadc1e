// SPDX-License-Identifier: Apache-2.0
#include "lrdm/samplers.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lrdm/diffusion.hpp"
#include "lrdm/rng.hpp"

namespace lrdm {

namespace {

std::vector<int> constant_t(std::size_t n, int t) { return std::vector<int>(n, t); }

std::vector<int> resolve_steps(const Schedule& s, const std::vector<int>& steps) {
  if (steps.empty()) {
    std::vector<int> all(static_cast<std::size_t>(s.T()));
    std::iota(all.begin(), all.end(), 1);
    return all;
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || steps[i] > s.T() || (i > 0 && steps[i] <= steps[i - 1])) {
      throw std::invalid_argument("sampler steps must be strictly increasing within [1, T]");
    }
  }
  return steps;
}

void check_repr(const Matrix& r, std::size_t rows) {
  if (r.rows != rows) {
    throw std::invalid_argument("representation has " + std::to_string(r.rows) +
                                " rows for a batch of " + std::to_string(rows));
  }
}

}  // namespace

Predictor net_predictor(const DenoiserNet& net, std::vector<int> labels) {
  return [&net, labels = std::move(labels)](const Matrix& x_t, int t, const Matrix* repr) {
    Tape tape(false);
    const std::vector<int> ts = constant_t(x_t.rows, t);
    DenoiserInput in{tape.constant(x_t), ts, std::nullopt, labels};
    if (repr) {
      check_repr(*repr, x_t.rows);
      in.repr = tape.constant(*repr);
    }
    return net.forward(tape, in).to_matrix();
  };
}

std::vector<int> strided_steps(int T, int n) {
  if (n < 1 || n > T) throw std::invalid_argument("strided_steps: need 1 <= n <= T");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) {
    out.push_back(static_cast<int>(std::lround(static_cast<double>(i) * T / n)));
  }
  return out;
}

Matrix ancestral_step(const Schedule& s, const Matrix& x_t, int t, const Matrix& prediction,
                      Parameterization p, const Matrix& z, ReverseVariance v) {
  if (t < 1 || t > s.T()) throw std::out_of_range("ancestral_step: timestep outside [1, T]");
  if (!x_t.same_shape(prediction)) throw std::invalid_argument("ancestral_step: prediction shape mismatch");
  const double sigma = t > 1 ? std::sqrt(s.sigma2(t, v)) : 0.0;
  if (sigma > 0.0 && !x_t.same_shape(z)) throw std::invalid_argument("ancestral_step: noise shape mismatch");
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t - 1);
  const double alpha = s.alpha(t);
  const double beta = s.beta(t);

  Matrix out(x_t.rows, x_t.cols);
  switch (p) {
    case Parameterization::Noise: {
      const double c = beta / std::sqrt(1.0 - ab);
      const double inv = 1.0 / std::sqrt(alpha);
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = inv * (x_t.data[i] - c * prediction.data[i]);
      }
      break;
    }
    case Parameterization::Image: {
      const double c0 = std::sqrt(ab) * beta / (std::sqrt(alpha) * (1.0 - ab));
      const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = c0 * prediction.data[i] + ct * x_t.data[i];
      }
      break;
    }
    case Parameterization::Mean:
      out = prediction;
      break;
  }
  if (sigma > 0.0) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += sigma * z.data[i];
  }
  return out;
}

Matrix ddim_step(const Schedule& s, const Matrix& x_t, int t, int t_prev, const Matrix& prediction,
                 Parameterization p) {
  if (t_prev < 0 || t_prev > t) throw std::invalid_argument("ddim_step: need 0 <= t_prev <= t");
  const std::vector<int> ts = constant_t(x_t.rows, t);
  const Matrix eps = prediction_to_eps(s, x_t, prediction, ts, p);
  const Matrix x0 = prediction_to_x0(s, x_t, prediction, ts, p);
  const double ab_prev = s.alpha_bar(t_prev);
  const double a = std::sqrt(ab_prev);
  const double b = std::sqrt(1.0 - ab_prev);
  Matrix out(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

Matrix ddim_invert(const Schedule& s, const Predictor& predict, Parameterization p, const Matrix& x0,
                   std::span<const int> steps, const ReprProvider* repr) {
  const std::vector<int> all = resolve_steps(s, std::vector<int>(steps.begin(), steps.end()));
  Matrix x = x0;
  for (int t_next : all) {
    std::optional<Matrix> r;
    if (repr) r = (*repr)(t_next);
    const Matrix pred = predict(x, t_next, r ? &*r : nullptr);
    const std::vector<int> ts = constant_t(x.rows, t_next);
    const Matrix eps = prediction_to_eps(s, x, pred, ts, p);
    const Matrix x0_hat = prediction_to_x0(s, x, pred, ts, p);
    const double a = std::sqrt(s.alpha_bar(t_next));
    const double b = std::sqrt(1.0 - s.alpha_bar(t_next));
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = a * x0_hat.data[i] + b * eps.data[i];
  }
  return x;
}

SampleTrace sample_loop(const Schedule& s, const Predictor& predict, Parameterization p,
                        const SamplerConfig& cfg, Matrix x_T, const ReprProvider* repr,
                        bool record) {
  Rng rng(cfg.seed);
  const std::vector<int> steps = resolve_steps(s, cfg.steps);
  if (cfg.kind == SamplerKind::Ancestral && !cfg.steps.empty() &&
      steps.size() != static_cast<std::size_t>(s.T())) {
    throw std::invalid_argument("ancestral sampling runs every timestep; use DDIM for strided steps");
  }
  SampleTrace trace;
  Matrix x = std::move(x_T);
  std::optional<Matrix> first_repr;
  Matrix z(x.rows, x.cols);
  for (std::size_t i = steps.size(); i-- > 0;) {
    const int t = steps[i];
    const int t_prev = i > 0 ? steps[i - 1] : 0;
    std::optional<Matrix> r;
    if (repr) {
      r = (*repr)(t);
      if (!first_repr) {
        first_repr = *r;
      } else if (!(*r == *first_repr)) {
        trace.repr_constant = false;
      }
    }
    const Matrix pred = predict(x, t, r ? &*r : nullptr);
    Matrix next;
    if (cfg.kind == SamplerKind::Ddim) {
      next = ddim_step(s, x, t, t_prev, pred, p);
    } else {
      if (t > 1) rng.fill_normal(z.data);
      next = ancestral_step(s, x, t, pred, p, z, cfg.variance);
    }
    if (record) {
      const std::vector<int> ts = constant_t(x.rows, t);
      trace.records.push_back({t_prev, next, prediction_to_x0(s, x, pred, ts, p)});
    }
    x = std::move(next);
  }
  trace.final = std::move(x);
  return trace;
}

SampleTrace sample_loop(const Schedule& s, const Predictor& predict, Parameterization p,
                        const SamplerConfig& cfg, std::size_t n, std::size_t dim,
                        const ReprProvider* repr, bool record) {
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix x_T(n, dim);
  rng.fill_normal(x_T.data);
  return sample_loop(s, predict, p, cfg, std::move(x_T), repr, record);
}

void write_trace_csv(std::ostream& os, const SampleTrace& trace) {
  for (std::size_t k = 0; k < trace.records.size(); ++k) {
    const auto& rec = trace.records[k];
    for (std::size_t r = 0; r < rec.x_t.rows; ++r) {
      os << k << ',' << rec.t;
      for (double v : rec.x_t.row(r)) os << ',' << fmt::format("{}", v);
      for (double v : rec.x0_hat.row(r)) os << ',' << fmt::format("{}", v);
      os << '\n';
    }
  }
}

}  // namespace lrdm
