// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdm/bundle.hpp"
#include "lrdm/data_io.hpp"
#include "lrdm/objectives.hpp"
#include "lrdm/optim.hpp"

namespace lrdm {

/// Timestep-range curriculum: training starts on [T - initial_width, T] and
/// the lower end moves linearly to 1 over `expand_steps` steps.
struct CurriculumConfig {
  bool enabled = false;
  int initial_width = 10;
  std::int64_t expand_steps = 0;  // 0: half of the run
};

TimestepWindow curriculum_window(const CurriculumConfig& c, int T, std::int64_t step,
                                 std::int64_t total_steps);

struct FirstStageTrainConfig {
  std::int64_t steps = 2000;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double ema_decay = 0.999;
  std::size_t welford_batches = 100;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::int64_t steps = 20000;
  std::uint64_t seed = 0;
  double lambda = 1e-3;  // conditional kinds only
  double ema_decay = 0.9999;
  bool ema_warmup = true;
  CurriculumConfig curriculum;
  FirstStageTrainConfig first_stage;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::string checkpoint_extra = "{}";

  /// Throws std::invalid_argument naming the offending field.
  void validate(int T) const;
};

struct MetricsRow {
  std::int64_t step = 0;
  double loss_total = 0.0;
  double loss_diffusion = 0.0;
  double loss_kl = 0.0;
  int t_window_lo = 1;
  int t_window_hi = 1;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

/// Non-finite loss. The message carries the step, timesteps and breakdown.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains the first stage as an autoencoder (when it is not the identity and
/// not already trained), loads its EMA weights, then fixes the latent scale
/// from the first `welford_batches` batches of encoded latents.
void first_stage_train(FirstStage& fs, const Matrix& data, const FirstStageTrainConfig& cfg,
                       std::uint64_t seed);

/// Runs (or resumes, from bundle.state.step) the diffusion training loop up
/// to cfg.steps updates. Each step draws a minibatch with replacement, one
/// timestep per row, and applies Adam to the denoiser (and encoder) followed
/// by an EMA update. `metrics` (optional) receives one CSV row per step.
std::vector<MetricsRow> train(const TrainConfig& cfg, ModelBundle& bundle, const Dataset& data,
                              std::ostream* metrics = nullptr);

/// Loss of one step for the bundle's model kind; exposed for gradient tests.
LossBreakdown bundle_loss(Tape& tape, const ModelBundle& bundle, const Matrix& z0,
                          std::span<const int> labels, double lambda, Rng& rng,
                          std::optional<TimestepWindow> window, bool train_mode);

}  // namespace lrdm
