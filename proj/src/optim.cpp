// SPDX-License-Identifier: Apache-2.0
#include "lrdm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lrdm {

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state,
               std::int64_t step, const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) state.m.assign(params.size(), 0.0);
  if (state.v.empty()) state.v.assign(params.size(), 0.0);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: moment buffers do not match parameter size");
  }
  if (step < 1) throw std::invalid_argument("adam_step: step counter must start at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

Adam::Adam(const ParamList& params, AdamConfig cfg) : cfg_(cfg) {
  moments_.reserve(params.size());
  for (const auto& p : params) {
    moments_.push_back({std::vector<double>(p.tensor->size(), 0.0),
                        std::vector<double>(p.tensor->size(), 0.0)});
  }
}

void Adam::step(const ParamList& params) {
  if (params.size() != moments_.size()) {
    throw std::invalid_argument("Adam::step: parameter list changed size");
  }
  ++step_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].tensor;
    adam_step(t.values(), t.grad(), moments_[i], step_, cfg_);
  }
}

EmaState ema_init(const ParamList& params, double decay, bool warmup) {
  if (decay < 0.0 || decay > 1.0) throw std::invalid_argument("ema decay must be in [0, 1]");
  EmaState ema;
  ema.decay = decay;
  ema.warmup = warmup;
  for (const auto& p : params) {
    ema.names.push_back(p.name);
    auto v = p.tensor->values();
    ema.shadow.emplace_back(v.begin(), v.end());
  }
  return ema;
}

double ema_effective_decay(const EmaState& ema) {
  if (!ema.warmup) return ema.decay;
  const double n = static_cast<double>(ema.num_updates);
  return std::min(ema.decay, (1.0 + n) / (10.0 + n));
}

void ema_update(EmaState& ema, const ParamList& params) {
  if (params.size() != ema.shadow.size()) {
    throw std::invalid_argument("ema_update: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(ema.shadow.size()) + " shadows");
  }
  const double d = ema_effective_decay(ema);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].tensor->values();
    auto& s = ema.shadow[i];
    if (s.size() != v.size() || ema.names[i] != params[i].name) {
      throw std::invalid_argument("ema_update: shadow for '" + ema.names[i] +
                                  "' does not match parameter '" + params[i].name + "'");
    }
    for (std::size_t k = 0; k < v.size(); ++k) s[k] = d * s[k] + (1.0 - d) * v[k];
  }
  ++ema.num_updates;
}

void ema_copy_to(const EmaState& ema, const ParamList& params) {
  if (params.size() != ema.shadow.size()) throw std::invalid_argument("ema_copy_to: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].tensor->values();
    if (v.size() != ema.shadow[i].size()) throw std::invalid_argument("ema_copy_to: shape mismatch");
    std::copy(ema.shadow[i].begin(), ema.shadow[i].end(), v.begin());
  }
}

void Welford::update(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

void Welford::update(std::span<const double> batch) {
  for (double x : batch) update(x);
}

Welford::Stats Welford::finalize() const {
  if (n_ < 2) {
    throw std::runtime_error("Welford::finalize needs at least 2 samples, got " + std::to_string(n_));
  }
  return {mean_, std::sqrt(m2_ / static_cast<double>(n_ - 1))};
}

}  // namespace lrdm
