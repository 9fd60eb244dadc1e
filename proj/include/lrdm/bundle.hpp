// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrdm/models.hpp"
#include "lrdm/optim.hpp"
#include "lrdm/samplers.hpp"
#include "lrdm/schedule.hpp"

namespace lrdm {

/// Dm: unconditional. Lrdm / TLrdm: representation-conditional with a
/// static / timestep-conditional encoder. Lvae: Lrdm trained only at t = T.
enum class ModelKind { Dm, Lrdm, TLrdm, Lvae };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

struct ScheduleConfig {
  int T = 100;
  double beta1 = 1e-3;
  double betaT = 0.2;
};

struct ModelConfig {
  ModelKind kind = ModelKind::Dm;
  Parameterization parameterization = Parameterization::Image;
  Weighting weighting = Weighting::Simple;
  ReverseVariance variance = ReverseVariance::Beta;
  DenoiserConfig denoiser;
  EncoderConfig encoder;  // ignored for Dm
  FirstStageConfig first_stage;

  bool conditional() const { return kind != ModelKind::Dm; }
  /// Fills the fields that follow from others (dims, T, conditioning flags)
  /// and rejects inconsistent combinations.
  void normalize(int T);
};

/// Optimizer / EMA / progress state carried by checkpoints for exact resume.
struct TrainState {
  std::int64_t step = 0;
  std::string rng_state;  // empty before the first training step
  bool first_stage_trained = false;
  EmaState ema;           // denoiser + first stage, never the encoder
  Adam adam;              // denoiser (+ encoder)
};

/// Everything needed to train, sample and evaluate one model.
struct ModelBundle {
  ModelConfig config;
  ScheduleConfig schedule_config;
  Schedule schedule;
  DenoiserNet denoiser;
  std::optional<ReprEncoder> encoder;
  FirstStage first_stage;
  TrainState state;

  /// Fresh weights drawn from `init_seed`; EMA shadow equals the live weights.
  static ModelBundle create(ModelConfig cfg, const ScheduleConfig& sched, std::uint64_t init_seed,
                            double ema_decay = 0.9999, bool ema_warmup = true);

  /// Parameters the diffusion optimizer updates (denoiser, then encoder).
  ParamList trainable() const;
  /// Parameters tracked by the EMA (denoiser, then first stage).
  ParamList ema_tracked() const;
  /// Canonical checkpoint order: denoiser, encoder, first stage.
  ParamList all_params() const;

  /// Deep copy (no tensors shared with *this).
  ModelBundle clone() const;
  /// Deep copy whose EMA-tracked parameters hold the shadow values.
  ModelBundle ema_snapshot() const;

  /// Eval-mode predictor for the denoiser.
  Predictor predictor(std::vector<int> labels = {}) const;
  /// Posterior means mu(z0) for a batch of latents (t and labels as the
  /// encoder requires).
  Matrix encode_mean(const Matrix& z0, std::span<const int> t = {},
                     std::span<const int> labels = {}) const;
  /// KL(q(r | z0) || N(0, I)) summed over repr dims, one value per row.
  std::vector<double> encoder_kl(const Matrix& z0, std::span<const int> t = {},
                                 std::span<const int> labels = {}) const;
};

/// Copies values between parameter lists with identical names and shapes.
void copy_param_values(const ParamList& from, const ParamList& to);

}  // namespace lrdm
