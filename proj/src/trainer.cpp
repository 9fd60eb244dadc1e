// SPDX-License-Identifier: Apache-2.0
#include "lrdm/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace lrdm {

TimestepWindow curriculum_window(const CurriculumConfig& c, int T, std::int64_t step,
                                 std::int64_t total_steps) {
  if (!c.enabled) return {1, T};
  const int lo0 = std::clamp(T - c.initial_width, 1, T);
  const std::int64_t expand = c.expand_steps > 0 ? c.expand_steps : std::max<std::int64_t>(1, total_steps / 2);
  const double frac = std::min(1.0, static_cast<double>(std::max<std::int64_t>(step, 0)) /
                                        static_cast<double>(expand));
  const int lo = lo0 - static_cast<int>(std::floor(frac * (lo0 - 1)));
  return {lo, T};
}

void TrainConfig::validate(int T) const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("trainer." + field + ": " + why);
  };
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr", "must be positive");
  if (batch_size == 0) bad("batch_size", "must be positive");
  if (steps < 0) bad("steps", "must be nonnegative");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda", "must be nonnegative");
  if (ema_decay < 0.0 || ema_decay > 1.0) bad("ema_decay", "must be in [0, 1]");
  if (checkpoint_every < 0) bad("checkpoint_every", "must be nonnegative");
  if (curriculum.enabled) {
    if (curriculum.initial_width < 0 || curriculum.initial_width >= T) {
      bad("curriculum.initial_width", "must be in [0, T)");
    }
    if (curriculum.expand_steps < 0) bad("curriculum.expand_steps", "must be nonnegative");
  }
  if (first_stage.steps < 0) bad("first_stage.steps", "must be nonnegative");
  if (first_stage.batch_size == 0) bad("first_stage.batch_size", "must be positive");
  if (first_stage.welford_batches == 0) bad("first_stage.welford_batches", "must be positive");
  if (!(first_stage.lr > 0.0)) bad("first_stage.lr", "must be positive");
}

void write_metrics_header(std::ostream& os) {
  os << "step,loss_total,loss_diffusion,loss_kl,t_window_lo,t_window_hi\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << fmt::format("{},{},{},{},{},{}\n", r.step, r.loss_total, r.loss_diffusion, r.loss_kl,
                    r.t_window_lo, r.t_window_hi);
}

namespace {

void sample_batch(const Matrix& data, std::span<const int> labels, std::size_t batch, Rng& rng,
                  Matrix& x, std::vector<int>& y) {
  x = Matrix(batch, data.cols);
  y.clear();
  const int last = static_cast<int>(data.rows) - 1;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, last));
    std::copy_n(data.row(idx).begin(), data.cols, x.row(i).begin());
    if (!labels.empty()) y.push_back(labels[idx]);
  }
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.tensor->zero_grad();
}

std::string describe(const LossBreakdown& lb, std::int64_t step) {
  std::string ts;
  const std::size_t shown = std::min<std::size_t>(lb.t.size(), 16);
  for (std::size_t i = 0; i < shown; ++i) ts += (i ? "," : "") + std::to_string(lb.t[i]);
  if (shown < lb.t.size()) ts += ",...";
  return fmt::format(
      "non-finite loss at step {}: total={} diffusion={} kl={} weight={} lambda={} t=[{}]", step,
      lb.total, lb.diffusion_term, lb.kl_term, lb.weight_applied, lb.lambda, ts);
}

}  // namespace

LossBreakdown bundle_loss(Tape& tape, const ModelBundle& b, const Matrix& z0,
                          std::span<const int> labels, double lambda, Rng& rng,
                          std::optional<TimestepWindow> window, bool train_mode) {
  LossOptions opt;
  opt.window = window;
  opt.labels = b.config.denoiser.num_classes > 0 ? labels : std::span<const int>{};
  opt.train_mode = train_mode;
  switch (b.config.kind) {
    case ModelKind::Dm:
      return dm_loss(tape, b.schedule, b.denoiser, z0, b.config.parameterization,
                     b.config.weighting, rng, opt);
    case ModelKind::Lrdm:
      return lrdm_loss(tape, b.schedule, b.denoiser, *b.encoder, z0, lambda, rng, opt);
    case ModelKind::TLrdm:
      return t_lrdm_loss(tape, b.schedule, b.denoiser, *b.encoder, z0, lambda, rng, opt);
    case ModelKind::Lvae:
      return lvae_loss(tape, b.schedule, b.denoiser, *b.encoder, z0, lambda, rng, opt);
  }
  throw std::logic_error("bundle_loss: unknown model kind");
}

void first_stage_train(FirstStage& fs, const Matrix& data, const FirstStageTrainConfig& cfg,
                       std::uint64_t seed) {
  if (fs.identity()) return;
  if (data.cols != fs.config().data_dim) {
    throw std::invalid_argument("first_stage_train: data has " + std::to_string(data.cols) +
                                " columns, first stage expects " +
                                std::to_string(fs.config().data_dim));
  }
  Rng rng(seed);
  const ParamList params = fs.parameters();
  Adam adam(params, AdamConfig{.lr = cfg.lr});
  EmaState ema = ema_init(params, cfg.ema_decay, true);
  Matrix x;
  std::vector<int> unused;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    sample_batch(data, {}, cfg.batch_size, rng, x, unused);
    Tape tape;
    const Var in = tape.constant(x);
    const Var rec = fs.decode_raw(tape, fs.encode_raw(tape, in));
    const Var loss = mean(sum_last(square(rec - in)));
    if (!std::isfinite(loss.item())) {
      throw TrainingError(fmt::format("non-finite first-stage loss at step {}", step));
    }
    zero_grads(params);
    tape.backward(loss);
    adam.step(params);
    ema_update(ema, params);
  }
  if (cfg.steps > 0) ema_copy_to(ema, params);

  Welford w;
  for (std::size_t k = 0; k < cfg.welford_batches; ++k) {
    sample_batch(data, {}, cfg.batch_size, rng, x, unused);
    Tape tape(false);
    const Var z = fs.encode_raw(tape, tape.constant(x));
    w.update(z.values());
  }
  const double sd = w.finalize().std;
  if (!(sd > 0.0)) throw TrainingError("first stage collapsed: latent std is zero");
  fs.set_scale(sd);
}

std::vector<MetricsRow> train(const TrainConfig& cfg, ModelBundle& b, const Dataset& data,
                              std::ostream* metrics) {
  const int T = b.schedule.T();
  cfg.validate(T);
  data.validate();
  if (data.dim() != b.config.first_stage.data_dim) {
    throw std::invalid_argument("train: dataset dimension " + std::to_string(data.dim()) +
                                " vs model data_dim " + std::to_string(b.config.first_stage.data_dim));
  }
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  const std::size_t classes = b.config.denoiser.num_classes;
  if (classes > 0) {
    if (!data.labeled()) throw std::invalid_argument("train: class-conditional model needs a labeled dataset");
    if (static_cast<std::size_t>(data.num_classes()) > classes) {
      throw std::invalid_argument("train: dataset has " + std::to_string(data.num_classes()) +
                                  " classes, model was built for " + std::to_string(classes));
    }
  }

  TrainState& st = b.state;
  if (!st.first_stage_trained) {
    if (st.step != 0) throw std::logic_error("train: first stage untrained in a resumed run");
    first_stage_train(b.first_stage, data.points, cfg.first_stage, cfg.seed ^ 0xf1a57u);
    st.first_stage_trained = true;
  }
  if (st.step == 0) {
    st.ema = ema_init(b.ema_tracked(), cfg.ema_decay, cfg.ema_warmup);
    st.adam = Adam(b.trainable(), AdamConfig{.lr = cfg.lr});
  } else {
    AdamConfig ac = st.adam.config();
    ac.lr = cfg.lr;
    st.adam.set_config(ac);
  }

  const Matrix latents = b.first_stage.encode(data.points);
  const std::span<const int> labels = classes > 0 ? std::span<const int>(data.labels)
                                                  : std::span<const int>{};
  Rng rng(cfg.seed);
  if (!st.rng_state.empty()) rng.restore(st.rng_state);

  const ParamList params = b.trainable();
  const ParamList tracked = b.ema_tracked();
  std::vector<MetricsRow> log;
  log.reserve(static_cast<std::size_t>(std::max<std::int64_t>(0, cfg.steps - st.step)));
  if (metrics && st.step == 0) write_metrics_header(*metrics);

  auto checkpoint = [&] {
    if (cfg.checkpoint_path.empty()) return;
    st.rng_state = rng.state();
    save_checkpoint(cfg.checkpoint_path, b, cfg.checkpoint_extra);
  };

  Matrix x;
  std::vector<int> y;
  for (std::int64_t step = st.step; step < cfg.steps; ++step) {
    TimestepWindow window = curriculum_window(cfg.curriculum, T, step, cfg.steps);
    if (b.config.kind == ModelKind::Lvae) window = {T, T};
    sample_batch(latents, labels, cfg.batch_size, rng, x, y);

    Tape tape;
    const LossBreakdown lb = bundle_loss(tape, b, x, y, cfg.lambda, rng, window, true);
    if (!std::isfinite(lb.total)) throw TrainingError(describe(lb, step));
    zero_grads(params);
    tape.backward(lb.loss);
    st.adam.step(params);
    ema_update(st.ema, tracked);
    st.step = step + 1;

    MetricsRow row{step, lb.total, lb.diffusion_term, lb.kl_term, window.lo, window.hi};
    if (metrics) write_metrics_row(*metrics, row);
    log.push_back(row);
    if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 && st.step < cfg.steps) {
      checkpoint();
    }
  }
  st.rng_state = rng.state();
  checkpoint();
  return log;
}

}  // namespace lrdm
