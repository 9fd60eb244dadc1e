// SPDX-License-Identifier: Apache-2.0
#include "lrdm/bundle.hpp"

#include <algorithm>
#include <stdexcept>

#include "lrdm/objectives.hpp"

namespace lrdm {

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Dm: return "dm";
    case ModelKind::Lrdm: return "lrdm";
    case ModelKind::TLrdm: return "t-lrdm";
    case ModelKind::Lvae: return "lvae";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "dm") return ModelKind::Dm;
  if (s == "lrdm") return ModelKind::Lrdm;
  if (s == "t-lrdm" || s == "tlrdm") return ModelKind::TLrdm;
  if (s == "lvae") return ModelKind::Lvae;
  throw std::invalid_argument("unknown model kind '" + std::string(s) +
                              "' (expected dm, lrdm, t-lrdm or lvae)");
}

void ModelConfig::normalize(int T) {
  if (first_stage.kind == FirstStageKind::Identity) first_stage.latent_dim = first_stage.data_dim;
  const std::size_t latent = first_stage.kind == FirstStageKind::Identity ? first_stage.data_dim
                                                                          : first_stage.latent_dim;
  if (latent == 0) throw std::invalid_argument("model: latent dimension must be positive");
  denoiser.T = T;
  denoiser.data_dim = latent;
  encoder.T = T;
  encoder.input_dim = latent;
  encoder.num_classes = denoiser.num_classes;
  if (conditional()) {
    if (parameterization != Parameterization::Image || weighting != Weighting::Simple) {
      throw std::invalid_argument("model: " + std::string(to_string(kind)) +
                                  " trains the unit-weighted image objective; got parameterization " +
                                  std::string(to_string(parameterization)) + " / weighting " +
                                  std::string(to_string(weighting)));
    }
    if (encoder.repr_dim == 0) throw std::invalid_argument("model: encoder.repr_dim must be positive");
    denoiser.repr_dim = encoder.repr_dim;
    encoder.timestep_conditional = kind == ModelKind::TLrdm;
  } else {
    denoiser.repr_dim = 0;
  }
}

ModelBundle ModelBundle::create(ModelConfig cfg, const ScheduleConfig& sched, std::uint64_t init_seed,
                                double ema_decay, bool ema_warmup) {
  cfg.normalize(sched.T);
  ModelBundle b;
  b.config = cfg;
  b.schedule_config = sched;
  b.schedule = Schedule::linear(sched.T, sched.beta1, sched.betaT);
  Rng rng(init_seed);
  b.denoiser = DenoiserNet(cfg.denoiser, rng);
  if (cfg.conditional()) b.encoder = ReprEncoder(cfg.encoder, rng);
  b.first_stage = FirstStage(cfg.first_stage, rng);
  b.state.ema = ema_init(b.ema_tracked(), ema_decay, ema_warmup);
  b.state.adam = Adam(b.trainable(), AdamConfig{});
  return b;
}

ParamList ModelBundle::trainable() const {
  ParamList out = denoiser.parameters();
  if (encoder) {
    ParamList e = encoder->parameters();
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

ParamList ModelBundle::ema_tracked() const {
  ParamList out = denoiser.parameters();
  ParamList f = first_stage.parameters();
  out.insert(out.end(), f.begin(), f.end());
  return out;
}

ParamList ModelBundle::all_params() const {
  ParamList out = trainable();
  ParamList f = first_stage.parameters();
  out.insert(out.end(), f.begin(), f.end());
  return out;
}

void copy_param_values(const ParamList& from, const ParamList& to) {
  if (from.size() != to.size()) {
    throw std::invalid_argument("copy_param_values: " + std::to_string(from.size()) + " vs " +
                                std::to_string(to.size()) + " parameters");
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor->shape() != to[i].tensor->shape()) {
      throw std::invalid_argument("copy_param_values: '" + from[i].name + "' " +
                                  shape_str(from[i].tensor->shape()) + " vs '" + to[i].name + "' " +
                                  shape_str(to[i].tensor->shape()));
    }
    auto src = from[i].tensor->values();
    std::copy(src.begin(), src.end(), to[i].tensor->values().begin());
  }
}

ModelBundle ModelBundle::clone() const {
  ModelBundle b;
  b.config = config;
  b.schedule_config = schedule_config;
  b.schedule = schedule;
  Rng rng(0);
  b.denoiser = DenoiserNet(config.denoiser, rng);
  if (encoder) b.encoder = ReprEncoder(config.encoder, rng);
  b.first_stage = FirstStage(config.first_stage, rng);
  b.first_stage.set_scale(first_stage.scale());
  copy_param_values(all_params(), b.all_params());
  b.state = state;
  return b;
}

ModelBundle ModelBundle::ema_snapshot() const {
  ModelBundle b = clone();
  ema_copy_to(state.ema, b.ema_tracked());
  return b;
}

Predictor ModelBundle::predictor(std::vector<int> labels) const {
  return net_predictor(denoiser, std::move(labels));
}

namespace {

GaussianHeads run_encoder(const ReprEncoder& enc, Tape& tape, const Matrix& z0,
                          std::span<const int> t, std::span<const int> labels) {
  return enc.encode(tape, tape.constant(z0), t, labels);
}

}  // namespace

Matrix ModelBundle::encode_mean(const Matrix& z0, std::span<const int> t,
                                std::span<const int> labels) const {
  if (!encoder) throw std::logic_error("encode_mean: model kind '" + std::string(to_string(config.kind)) +
                                       "' has no representation encoder");
  Tape tape(false);
  return run_encoder(*encoder, tape, z0, t, labels).mu.to_matrix();
}

std::vector<double> ModelBundle::encoder_kl(const Matrix& z0, std::span<const int> t,
                                            std::span<const int> labels) const {
  if (!encoder) throw std::logic_error("encoder_kl: model kind '" + std::string(to_string(config.kind)) +
                                       "' has no representation encoder");
  Tape tape(false);
  const GaussianHeads h = run_encoder(*encoder, tape, z0, t, labels);
  const Var kl = kl_standard_normal_rows(h.mu, h.logvar);
  return {kl.values().begin(), kl.values().end()};
}

}  // namespace lrdm
