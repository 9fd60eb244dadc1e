// SPDX-License-Identifier: Apache-2.0
#include "lrdm/models.hpp"

#include <cmath>
#include <stdexcept>

namespace lrdm {

namespace {

Var one_hot(Tape& tape, std::span<const int> labels, std::size_t num_classes) {
  Tensor oh({labels.size(), num_classes});
  auto v = oh.values();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw std::out_of_range("class id " + std::to_string(c) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    }
    v[i * num_classes + static_cast<std::size_t>(c)] = 1.0;
  }
  return tape.constant(std::move(oh));
}

TensorPtr make_embedding_table(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal();
  return make_parameter({rows, cols}, std::move(v));
}

void check_batch(std::span<const int> ids, std::size_t batch, const char* what) {
  if (ids.size() != batch) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(batch) +
                                " entries, got " + std::to_string(ids.size()));
  }
}

}  // namespace

std::vector<double> timestep_embedding(int t, std::size_t dim, int T) {
  if (dim % 2 != 0) {
    throw std::invalid_argument("timestep_embedding: dim must be even, got " + std::to_string(dim));
  }
  if (t < 0 || t > T) {
    throw std::out_of_range("timestep_embedding: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(T) + "]");
  }
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
    out[k] = std::sin(t * w);
    out[half + k] = std::cos(t * w);
  }
  return out;
}

Matrix timestep_embedding(std::span<const int> t, std::size_t dim, int T) {
  Matrix m(t.size(), dim);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto e = timestep_embedding(t[i], dim, T);
    std::copy(e.begin(), e.end(), m.row(i).begin());
  }
  return m;
}

Var dropout(Tape& tape, const Var& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  Tensor mask(x.shape());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask.values()) m = rng.uniform() < p ? 0.0 : keep;
  return mul(x, tape.constant(std::move(mask)));
}

Var reparameterize(const Var& mu, const Var& logvar, const Var& noise) {
  if (mu.shape() != logvar.shape() || mu.shape() != noise.shape()) {
    throw std::invalid_argument("reparameterize: shape mismatch " + shape_str(mu.shape()) + ", " +
                                shape_str(logvar.shape()) + ", " + shape_str(noise.shape()));
  }
  return mu + exp(logvar * 0.5) * noise;
}

// ---------------------------------------------------------------- Linear / Mlp

Linear Linear::make(std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
  std::vector<double> w(in * out, 0.0);
  std::vector<double> b(out, 0.0);
  if (!zero_init) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * bound;
    for (double& x : b) x = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return {make_parameter({in, out}, std::move(w)), make_parameter({out}, std::move(b))};
}

Var Linear::forward(Tape& tape, const Var& x) const {
  return matmul(x, tape.param(weight)) + tape.param(bias);
}

Mlp Mlp::make(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out, Rng& rng,
              bool zero_init_output, Activation act) {
  Mlp m;
  m.activation = act;
  std::size_t width = in;
  for (std::size_t i = 0; i < depth; ++i) {
    m.layers.push_back(Linear::make(width, hidden, rng));
    width = hidden;
  }
  m.layers.push_back(Linear::make(width, out, rng, zero_init_output));
  return m;
}

Var Mlp::trunk(Tape& tape, const Var& x, double dropout_p, Rng* rng) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = layers[i].forward(tape, h);
    h = activation == Activation::Silu ? silu(h) : relu(h);
    if (dropout_p > 0.0) {
      if (!rng) throw std::invalid_argument("dropout requested without a random source");
      h = dropout(tape, h, dropout_p, *rng);
    }
  }
  return h;
}

Var Mlp::forward(Tape& tape, const Var& x, double dropout_p, Rng* rng) const {
  return layers.back().forward(tape, trunk(tape, x, dropout_p, rng));
}

void Mlp::append_params(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    out.push_back({base + ".weight", layers[i].weight});
    out.push_back({base + ".bias", layers[i].bias});
  }
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight->size() + l.bias->size();
  return n;
}

// ---------------------------------------------------------------- DenoiserNet

DenoiserNet::DenoiserNet(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.embed_dim % 2 != 0) throw std::invalid_argument("DenoiserNet: embed_dim must be even");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw std::invalid_argument("DenoiserNet: dropout must be in [0, 1)");
  mlp_ = Mlp::make(input_dim(), cfg.hidden, cfg.depth, cfg.data_dim, rng, cfg.zero_init_output,
                   cfg.activation);
  if (cfg.num_classes > 0) class_embedding_ = make_embedding_table(cfg.num_classes, cfg.embed_dim, rng);
}

std::size_t DenoiserNet::input_dim() const { return cfg_.data_dim + cfg_.embed_dim + cfg_.repr_dim; }

Var DenoiserNet::forward(Tape& tape, const DenoiserInput& in, bool train_mode, Rng* rng) const {
  const auto& xs = in.x_t.shape();
  if (xs.size() != 2 || xs[1] != cfg_.data_dim) {
    throw std::invalid_argument("DenoiserNet: x_t shape " + shape_str(xs) + ", expected [B," +
                                std::to_string(cfg_.data_dim) + "]");
  }
  const std::size_t batch = xs[0];
  check_batch(in.t, batch, "DenoiserNet timesteps");

  Var cond = tape.constant(timestep_embedding(in.t, cfg_.embed_dim, cfg_.T));
  if (cfg_.num_classes > 0) {
    if (in.labels.empty()) throw std::invalid_argument("DenoiserNet: class-conditional net needs labels");
    check_batch(in.labels, batch, "DenoiserNet labels");
    cond = cond + matmul(one_hot(tape, in.labels, cfg_.num_classes), tape.param(class_embedding_));
  } else if (!in.labels.empty()) {
    throw std::invalid_argument("DenoiserNet: labels supplied but net is not class-conditional");
  }

  std::vector<Var> parts{in.x_t, cond};
  if (cfg_.repr_dim > 0) {
    if (!in.repr) throw std::invalid_argument("DenoiserNet: net expects a representation input");
    const auto& rs = in.repr->shape();
    if (rs.size() != 2 || rs[0] != batch || rs[1] != cfg_.repr_dim) {
      throw std::invalid_argument("DenoiserNet: representation shape " + shape_str(rs) +
                                  ", expected [" + std::to_string(batch) + "," +
                                  std::to_string(cfg_.repr_dim) + "]");
    }
    parts.push_back(*in.repr);
  } else if (in.repr) {
    throw std::invalid_argument("DenoiserNet: representation supplied but net is not configured for it");
  }

  const double p = train_mode ? cfg_.dropout : 0.0;
  return mlp_.forward(tape, concat_last(parts), p, rng);
}

ParamList DenoiserNet::parameters() const {
  ParamList out;
  mlp_.append_params(out, "denoiser");
  if (class_embedding_) out.push_back({"denoiser.class_embedding", class_embedding_});
  return out;
}

std::size_t DenoiserNet::param_count() const {
  return mlp_.param_count() + (class_embedding_ ? class_embedding_->size() : 0);
}

// ---------------------------------------------------------------- ReprEncoder

ReprEncoder::ReprEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.repr_dim == 0) throw std::invalid_argument("ReprEncoder: repr_dim must be positive");
  if (cfg.embed_dim % 2 != 0) throw std::invalid_argument("ReprEncoder: embed_dim must be even");
  const bool conditional = cfg.timestep_conditional || cfg.num_classes > 0;
  const std::size_t in = cfg.input_dim + (conditional ? cfg.embed_dim : 0);
  trunk_ = Mlp::make(in, cfg.hidden, cfg.depth, 1, rng);
  trunk_.layers.pop_back();  // the two heads replace the output layer
  mu_head_ = Linear::make(cfg.hidden, cfg.repr_dim, rng, cfg.zero_init_heads);
  logvar_head_ = Linear::make(cfg.hidden, cfg.repr_dim, rng, cfg.zero_init_heads);
  if (cfg.num_classes > 0) class_embedding_ = make_embedding_table(cfg.num_classes, cfg.embed_dim, rng);
}

GaussianHeads ReprEncoder::encode(Tape& tape, const Var& z0, std::span<const int> t,
                                  std::span<const int> labels) const {
  const auto& zs = z0.shape();
  if (zs.size() != 2 || zs[1] != cfg_.input_dim) {
    throw std::invalid_argument("ReprEncoder: input shape " + shape_str(zs) + ", expected [B," +
                                std::to_string(cfg_.input_dim) + "]");
  }
  const std::size_t batch = zs[0];
  std::optional<Var> cond;
  if (cfg_.timestep_conditional) {
    if (t.empty()) throw std::invalid_argument("ReprEncoder: timestep-conditional encoder needs t");
    check_batch(t, batch, "ReprEncoder timesteps");
    cond = tape.constant(timestep_embedding(t, cfg_.embed_dim, cfg_.T));
  } else if (!t.empty()) {
    throw std::invalid_argument("ReprEncoder: t supplied but encoder is not timestep-conditional");
  }
  if (cfg_.num_classes > 0) {
    if (labels.empty()) throw std::invalid_argument("ReprEncoder: class-conditional encoder needs labels");
    check_batch(labels, batch, "ReprEncoder labels");
    Var emb = matmul(one_hot(tape, labels, cfg_.num_classes), tape.param(class_embedding_));
    cond = cond ? *cond + emb : emb;
  } else if (!labels.empty()) {
    throw std::invalid_argument("ReprEncoder: labels supplied but encoder is not class-conditional");
  }
  Var in = cond ? concat_last({z0, *cond}) : z0;
  Var h = in;
  for (const auto& layer : trunk_.layers) {
    h = layer.forward(tape, h);
    h = trunk_.activation == Activation::Silu ? silu(h) : relu(h);
  }
  return {mu_head_.forward(tape, h), logvar_head_.forward(tape, h)};
}

ParamList ReprEncoder::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < trunk_.layers.size(); ++i) {
    const std::string base = "encoder.layer" + std::to_string(i);
    out.push_back({base + ".weight", trunk_.layers[i].weight});
    out.push_back({base + ".bias", trunk_.layers[i].bias});
  }
  out.push_back({"encoder.mu.weight", mu_head_.weight});
  out.push_back({"encoder.mu.bias", mu_head_.bias});
  out.push_back({"encoder.logvar.weight", logvar_head_.weight});
  out.push_back({"encoder.logvar.bias", logvar_head_.bias});
  if (class_embedding_) out.push_back({"encoder.class_embedding", class_embedding_});
  return out;
}

std::size_t ReprEncoder::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

// ---------------------------------------------------------------- FirstStage

FirstStage::FirstStage(const FirstStageConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.kind == FirstStageKind::Mlp) {
    encoder_ = Mlp::make(cfg.data_dim, cfg.hidden, cfg.depth, cfg.latent_dim, rng);
    decoder_ = Mlp::make(cfg.latent_dim, cfg.hidden, cfg.depth, cfg.data_dim, rng);
  }
}

Var FirstStage::encode_raw(Tape& tape, const Var& x) const {
  return identity() ? x : encoder_.forward(tape, x);
}

Var FirstStage::decode_raw(Tape& tape, const Var& z) const {
  return identity() ? z : decoder_.forward(tape, z);
}

Var FirstStage::encode(Tape& tape, const Var& x) const {
  Var z = encode_raw(tape, x);
  if (identity() || scale_ <= 0.0) return z;
  return z * (1.0 / scale_);
}

Var FirstStage::decode(Tape& tape, const Var& z) const {
  if (identity() || scale_ <= 0.0) return decode_raw(tape, z);
  return decode_raw(tape, z * scale_);
}

Matrix FirstStage::encode(const Matrix& x) const {
  if (identity()) return x;
  Tape tape(false);
  return encode(tape, tape.constant(x)).to_matrix();
}

Matrix FirstStage::decode(const Matrix& z) const {
  if (identity()) return z;
  Tape tape(false);
  return decode(tape, tape.constant(z)).to_matrix();
}

ParamList FirstStage::parameters() const {
  ParamList out;
  if (!identity()) {
    encoder_.append_params(out, "first_stage.encoder");
    decoder_.append_params(out, "first_stage.decoder");
  }
  return out;
}

}  // namespace lrdm
