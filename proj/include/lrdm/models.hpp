// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrdm/autodiff.hpp"
#include "lrdm/matrix.hpp"
#include "lrdm/rng.hpp"

namespace lrdm {

struct NamedParam {
  std::string name;
  TensorPtr tensor;
};
using ParamList = std::vector<NamedParam>;

enum class Activation { Silu, Relu };

/// Sinusoidal embedding: [sin(t w_k), cos(t w_k)] with w_k = 10000^(-2k/dim).
std::vector<double> timestep_embedding(int t, std::size_t dim, int T);
/// One embedding row per entry of `t`.
Matrix timestep_embedding(std::span<const int> t, std::size_t dim, int T);

/// Inverted dropout: zeroes entries with probability p and rescales the rest
/// by 1/(1-p). Identity when p == 0.
Var dropout(Tape& tape, const Var& x, double p, Rng& rng);

/// mu + exp(logvar / 2) * noise
Var reparameterize(const Var& mu, const Var& logvar, const Var& noise);

struct Linear {
  TensorPtr weight;  // [in, out]
  TensorPtr bias;    // [out]

  static Linear make(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);
  std::size_t in_dim() const { return weight->shape()[0]; }
  std::size_t out_dim() const { return weight->shape()[1]; }
  Var forward(Tape& tape, const Var& x) const;
};

/// Fully-connected stack: hidden layers with an activation (and optional
/// dropout in training), then a linear output layer.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::Silu;

  static Mlp make(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out, Rng& rng,
                  bool zero_init_output = false, Activation act = Activation::Silu);
  /// Runs the hidden layers only; returns the last hidden activation.
  Var trunk(Tape& tape, const Var& x, double dropout_p = 0.0, Rng* rng = nullptr) const;
  Var forward(Tape& tape, const Var& x, double dropout_p = 0.0, Rng* rng = nullptr) const;
  void append_params(ParamList& out, const std::string& prefix) const;
  std::size_t param_count() const;
};

struct DenoiserConfig {
  std::size_t data_dim = 2;
  std::size_t hidden = 128;
  std::size_t depth = 3;
  std::size_t embed_dim = 32;
  std::size_t repr_dim = 0;     // 0: no representation input
  std::size_t num_classes = 0;  // 0: unconditional
  double dropout = 0.0;
  int T = 100;
  Activation activation = Activation::Silu;
  bool zero_init_output = false;
};

struct DenoiserInput {
  Var x_t;                            // [B, D]
  std::span<const int> t;             // B timesteps
  std::optional<Var> repr;            // [B, R] when the net takes a representation
  std::span<const int> labels = {};   // B class ids when class-conditional
};

/// Noise / image / mean predictor. The input layer sees
/// [x_t, timestep embedding (+ class embedding), r].
class DenoiserNet {
 public:
  DenoiserNet() = default;
  DenoiserNet(const DenoiserConfig& cfg, Rng& rng);

  const DenoiserConfig& config() const { return cfg_; }
  std::size_t input_dim() const;

  Var forward(Tape& tape, const DenoiserInput& in, bool train_mode = false,
              Rng* rng = nullptr) const;

  ParamList parameters() const;
  std::size_t param_count() const;
  /// Direct access for tests and surgery (e.g. zeroing representation weights).
  const Mlp& mlp() const { return mlp_; }
  const TensorPtr& class_embedding() const { return class_embedding_; }

 private:
  DenoiserConfig cfg_;
  Mlp mlp_;
  TensorPtr class_embedding_;  // [num_classes, embed_dim]
};

struct EncoderConfig {
  std::size_t input_dim = 2;
  std::size_t hidden = 128;
  std::size_t depth = 2;
  std::size_t repr_dim = 8;
  bool timestep_conditional = false;
  std::size_t embed_dim = 32;
  int T = 100;
  std::size_t num_classes = 0;
  bool zero_init_heads = true;
};

struct GaussianHeads {
  Var mu;
  Var logvar;
};

/// Gaussian posterior encoder q(r | z0) (optionally also conditioned on t
/// and/or a class label) with a shared trunk and two linear heads.
class ReprEncoder {
 public:
  ReprEncoder() = default;
  ReprEncoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  GaussianHeads encode(Tape& tape, const Var& z0, std::span<const int> t = {},
                       std::span<const int> labels = {}) const;

  ParamList parameters() const;
  std::size_t param_count() const;

 private:
  EncoderConfig cfg_;
  Mlp trunk_;
  Linear mu_head_;
  Linear logvar_head_;
  TensorPtr class_embedding_;
};

enum class FirstStageKind { Identity, Mlp };

struct FirstStageConfig {
  FirstStageKind kind = FirstStageKind::Identity;
  std::size_t data_dim = 2;
  std::size_t latent_dim = 2;
  std::size_t hidden = 64;
  std::size_t depth = 2;
};

/// Toy autoencoder standing in for a pretrained first stage. Encoding
/// divides by the estimated latent std once `scale` is set.
class FirstStage {
 public:
  FirstStage() = default;
  FirstStage(const FirstStageConfig& cfg, Rng& rng);

  const FirstStageConfig& config() const { return cfg_; }
  bool identity() const { return cfg_.kind == FirstStageKind::Identity; }
  std::size_t latent_dim() const { return identity() ? cfg_.data_dim : cfg_.latent_dim; }

  /// 0 means unset.
  double scale() const { return scale_; }
  void set_scale(double s) { scale_ = s; }

  Var encode(Tape& tape, const Var& x) const;
  Var decode(Tape& tape, const Var& z) const;
  /// Unscaled encoder output (what the rescale statistics are taken over).
  Var encode_raw(Tape& tape, const Var& x) const;
  Var decode_raw(Tape& tape, const Var& z) const;
  Matrix encode(const Matrix& x) const;
  Matrix decode(const Matrix& z) const;

  ParamList parameters() const;

 private:
  FirstStageConfig cfg_;
  Mlp encoder_;
  Mlp decoder_;
  double scale_ = 0.0;
};

}  // namespace lrdm
