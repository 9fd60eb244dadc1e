// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrdm/models.hpp"

namespace lrdm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update. `step` is the 1-based update count.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state,
               std::int64_t step, const AdamConfig& cfg);

/// Adam over a fixed parameter list (moments aligned with the list order).
class Adam {
 public:
  Adam() = default;
  Adam(const ParamList& params, AdamConfig cfg);

  void step(const ParamList& params);
  std::int64_t steps_taken() const { return step_; }

  const AdamConfig& config() const { return cfg_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }
  std::vector<AdamMoments>& moments() { return moments_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }
  void set_steps_taken(std::int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  std::vector<AdamMoments> moments_;
  std::int64_t step_ = 0;
};

/// Exponential moving average of a parameter set. With `warmup`, the decay
/// used for update n is min(decay, (1 + n) / (10 + n)).
struct EmaState {
  double decay = 0.9999;
  bool warmup = false;
  std::int64_t num_updates = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> shadow;
};

EmaState ema_init(const ParamList& params, double decay, bool warmup = false);
double ema_effective_decay(const EmaState& ema);
/// shadow <- d * shadow + (1 - d) * params
void ema_update(EmaState& ema, const ParamList& params);
/// Overwrite the parameter values with the shadow copy.
void ema_copy_to(const EmaState& ema, const ParamList& params);

/// Single-pass running mean / variance.
class Welford {
 public:
  void update(double x);
  void update(std::span<const double> batch);

  std::size_t count() const { return n_; }
  double mean() const { return mean_; }

  struct Stats {
    double mean;
    double std;  // sample standard deviation (n - 1)
  };
  /// Throws with fewer than two samples.
  Stats finalize() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace lrdm
