// SPDX-License-Identifier: Apache-2.0
#include "lrdm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace lrdm {

namespace {

std::string_view to_string(Activation a) { return a == Activation::Silu ? "silu" : "relu"; }
std::string_view to_string(FirstStageKind k) { return k == FirstStageKind::Identity ? "identity" : "mlp"; }
std::string_view to_string(ReverseVariance v) { return v == ReverseVariance::Beta ? "beta" : "beta_tilde"; }
std::string_view to_string(SamplerKind k) { return k == SamplerKind::Ddim ? "ddim" : "ancestral"; }

// Reads the keys of one JSON object and complains about anything left over.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  template <typename E, typename Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    if (!j_.contains(key)) return;
    std::string v;
    get(key, v);
    try {
      out = parse(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + field(k) + "'");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Activation parse_activation(std::string_view s) {
  if (s == "silu") return Activation::Silu;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "' (expected silu|relu)");
}

FirstStageKind parse_first_stage_kind(std::string_view s) {
  if (s == "identity") return FirstStageKind::Identity;
  if (s == "mlp") return FirstStageKind::Mlp;
  throw std::invalid_argument("unknown first stage '" + std::string(s) + "' (expected identity|mlp)");
}

ReverseVariance parse_variance(std::string_view s) {
  if (s == "beta") return ReverseVariance::Beta;
  if (s == "beta_tilde") return ReverseVariance::BetaTilde;
  throw std::invalid_argument("unknown variance '" + std::string(s) + "' (expected beta|beta_tilde)");
}

SamplerKind parse_sampler_kind(std::string_view s) {
  if (s == "ddim") return SamplerKind::Ddim;
  if (s == "ancestral") return SamplerKind::Ancestral;
  throw std::invalid_argument("unknown sampler '" + std::string(s) + "' (expected ddim|ancestral)");
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json to_json(const ScheduleConfig& c) {
  return Json{{"T", c.T}, {"beta1", c.beta1}, {"betaT", c.betaT}};
}

ScheduleConfig schedule_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  ScheduleConfig c;
  r.get("T", c.T);
  r.get("beta1", c.beta1);
  r.get("betaT", c.betaT);
  r.finish();
  return c;
}

Json to_json(const ModelConfig& c) {
  const auto& d = c.denoiser;
  const auto& e = c.encoder;
  const auto& f = c.first_stage;
  return Json{
      {"kind", to_string(c.kind)},
      {"parameterization", to_string(c.parameterization)},
      {"weighting", to_string(c.weighting)},
      {"variance", to_string(c.variance)},
      {"denoiser",
       {{"data_dim", d.data_dim}, {"hidden", d.hidden}, {"depth", d.depth},
        {"embed_dim", d.embed_dim}, {"repr_dim", d.repr_dim}, {"num_classes", d.num_classes},
        {"dropout", d.dropout}, {"T", d.T}, {"activation", to_string(d.activation)},
        {"zero_init_output", d.zero_init_output}}},
      {"encoder",
       {{"input_dim", e.input_dim}, {"hidden", e.hidden}, {"depth", e.depth},
        {"repr_dim", e.repr_dim}, {"timestep_conditional", e.timestep_conditional},
        {"embed_dim", e.embed_dim}, {"T", e.T}, {"num_classes", e.num_classes},
        {"zero_init_heads", e.zero_init_heads}}},
      {"first_stage",
       {{"kind", to_string(f.kind)}, {"data_dim", f.data_dim}, {"latent_dim", f.latent_dim},
        {"hidden", f.hidden}, {"depth", f.depth}}},
  };
}

ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  ModelConfig c;
  r.get_enum("kind", c.kind, parse_model_kind);
  r.get_enum("parameterization", c.parameterization, parse_parameterization);
  r.get_enum("weighting", c.weighting, parse_weighting);
  r.get_enum("variance", c.variance, parse_variance);
  if (const Json* dj = r.child("denoiser")) {
    Reader d(*dj, r.field("denoiser"));
    auto& o = c.denoiser;
    d.get("data_dim", o.data_dim);
    d.get("hidden", o.hidden);
    d.get("depth", o.depth);
    d.get("embed_dim", o.embed_dim);
    d.get("repr_dim", o.repr_dim);
    d.get("num_classes", o.num_classes);
    d.get("dropout", o.dropout);
    d.get("T", o.T);
    d.get_enum("activation", o.activation, parse_activation);
    d.get("zero_init_output", o.zero_init_output);
    d.finish();
  }
  if (const Json* ej = r.child("encoder")) {
    Reader e(*ej, r.field("encoder"));
    auto& o = c.encoder;
    e.get("input_dim", o.input_dim);
    e.get("hidden", o.hidden);
    e.get("depth", o.depth);
    e.get("repr_dim", o.repr_dim);
    e.get("timestep_conditional", o.timestep_conditional);
    e.get("embed_dim", o.embed_dim);
    e.get("T", o.T);
    e.get("num_classes", o.num_classes);
    e.get("zero_init_heads", o.zero_init_heads);
    e.finish();
  }
  if (const Json* fj = r.child("first_stage")) {
    Reader f(*fj, r.field("first_stage"));
    auto& o = c.first_stage;
    f.get_enum("kind", o.kind, parse_first_stage_kind);
    f.get("data_dim", o.data_dim);
    f.get("latent_dim", o.latent_dim);
    f.get("hidden", o.hidden);
    f.get("depth", o.depth);
    f.finish();
  }
  r.finish();
  return c;
}

ScheduleConfig ScheduleSection::resolve() const {
  const auto [b1, bT] = default_linear_endpoints(T);
  return {T, beta1.value_or(b1), betaT.value_or(bT)};
}

double TrainerSection::resolved_dropout(ModelKind kind) const {
  return dropout.value_or(kind == ModelKind::Dm ? 0.2 : 0.0);
}

void RunConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (schedule.T < 2) bad("schedule.T", "must be >= 2");
  const ScheduleConfig s = schedule.resolve();
  if (!(s.beta1 > 0.0) || !(s.beta1 <= s.betaT) || !(s.betaT < 1.0)) {
    bad("schedule.beta1", "need 0 < beta1 <= betaT < 1");
  }
  try {
    ModelConfig m = model;
    m.normalize(schedule.T);
  } catch (const std::invalid_argument& e) {
    bad("model", e.what());
  }
  if (model.denoiser.hidden == 0 || model.denoiser.depth == 0) bad("model.denoiser", "hidden and depth must be positive");
  if (model.conditional() && (model.encoder.hidden == 0 || model.encoder.depth == 0)) {
    bad("model.encoder", "hidden and depth must be positive");
  }
  if (model.denoiser.embed_dim == 0 || model.denoiser.embed_dim % 2 != 0) {
    bad("model.denoiser.embed_dim", "must be a positive even number");
  }
  const double p = trainer.resolved_dropout(model.kind);
  if (p < 0.0 || p >= 1.0) bad("trainer.dropout", "must be in [0, 1)");
  try {
    trainer.train.validate(schedule.T);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (sampler.steps < 0 || sampler.steps > schedule.T) bad("sampler.steps", "must be in [0, T]");
  if (sampler.kind == SamplerKind::Ancestral && sampler.steps != 0 && sampler.steps != schedule.T) {
    bad("sampler.steps", "ancestral sampling runs every timestep (use 0)");
  }
  if (sampler.n == 0) bad("sampler.n", "must be positive");
  if (data.source != "mixture" && data.source != "csv") bad("data.source", "expected mixture|csv");
  if (data.source == "csv" && data.path.empty()) bad("data.path", "required when data.source is csv");
  if (data.source == "mixture") {
    if (data.mixture.modes < 1) bad("data.modes", "must be >= 1");
    if (data.mixture.n == 0) bad("data.n", "must be positive");
    if (!(data.mixture.std >= 0.0)) bad("data.std", "must be nonnegative");
    if (data.heldout_n == 0) bad("data.heldout_n", "must be positive");
  }
  for (int t : analysis.t_grid) {
    if (t < 1 || t > schedule.T) bad("analysis.t_grid", "entries must lie in [1, T]");
  }
  if (analysis.n_mc < 1) bad("analysis.n_mc", "must be >= 1");
  if (analysis.eval_n == 0) bad("analysis.eval_n", "must be positive");
  if (analysis.null_resamples < 2) bad("analysis.null_resamples", "must be >= 2");
  if (analysis.energy_n < 2) bad("analysis.energy_n", "must be >= 2");
  if (analysis.ddim_steps < 0 || analysis.ddim_steps > schedule.T) bad("analysis.ddim_steps", "must be in [0, T]");
  if (analysis.interpolate_points < 2) bad("analysis.interpolate_points", "must be >= 2");
}

Json to_json(const RunConfig& c) {
  const TrainConfig& t = c.trainer.train;
  return Json{
      {"schedule",
       {{"T", c.schedule.T}, {"beta1", optional_json(c.schedule.beta1)},
        {"betaT", optional_json(c.schedule.betaT)}}},
      {"model", to_json(c.model)},
      {"trainer",
       {{"lr", t.lr},
        {"batch_size", t.batch_size},
        {"steps", t.steps},
        {"seed", t.seed},
        {"lambda", t.lambda},
        {"ema_decay", t.ema_decay},
        {"ema_warmup", t.ema_warmup},
        {"dropout", optional_json(c.trainer.dropout)},
        {"checkpoint_every", t.checkpoint_every},
        {"curriculum",
         {{"enabled", t.curriculum.enabled},
          {"initial_width", t.curriculum.initial_width},
          {"expand_steps", t.curriculum.expand_steps}}},
        {"first_stage",
         {{"steps", t.first_stage.steps},
          {"batch_size", t.first_stage.batch_size},
          {"lr", t.first_stage.lr},
          {"ema_decay", t.first_stage.ema_decay},
          {"welford_batches", t.first_stage.welford_batches}}}}},
      {"sampler",
       {{"kind", to_string(c.sampler.kind)},
        {"steps", c.sampler.steps},
        {"seed", c.sampler.seed},
        {"n", c.sampler.n}}},
      {"data",
       {{"source", c.data.source},
        {"n", c.data.mixture.n},
        {"modes", c.data.mixture.modes},
        {"radius", c.data.mixture.radius},
        {"std", c.data.mixture.std},
        {"seed", c.data.mixture.seed},
        {"labeled", c.data.mixture.labeled},
        {"heldout_n", c.data.heldout_n},
        {"heldout_seed", c.data.heldout_seed},
        {"path", c.data.path},
        {"heldout_path", c.data.heldout_path}}},
      {"analysis",
       {{"t_grid", c.analysis.t_grid},
        {"n_mc", c.analysis.n_mc},
        {"eval_n", c.analysis.eval_n},
        {"null_resamples", c.analysis.null_resamples},
        {"energy_n", c.analysis.energy_n},
        {"ddim_steps", c.analysis.ddim_steps},
        {"interpolate_points", c.analysis.interpolate_points},
        {"seed", c.analysis.seed}}},
  };
}

RunConfig run_config_from_json(const Json& j) {
  Reader r(j, "config");
  RunConfig c;
  auto sub = [&](const char* key, auto&& fn) {
    if (const Json* child = r.child(key)) {
      Reader s(*child, key);
      fn(s);
      s.finish();
    }
  };
  sub("schedule", [&](Reader& s) {
    s.get("T", c.schedule.T);
    s.get_optional("beta1", c.schedule.beta1);
    s.get_optional("betaT", c.schedule.betaT);
  });
  if (const Json* m = r.child("model")) c.model = model_config_from_json(*m, "model");
  sub("trainer", [&](Reader& s) {
    TrainConfig& t = c.trainer.train;
    s.get("lr", t.lr);
    s.get("batch_size", t.batch_size);
    s.get("steps", t.steps);
    s.get("seed", t.seed);
    s.get("lambda", t.lambda);
    s.get("ema_decay", t.ema_decay);
    s.get("ema_warmup", t.ema_warmup);
    s.get_optional("dropout", c.trainer.dropout);
    s.get("checkpoint_every", t.checkpoint_every);
    if (const Json* cj = s.child("curriculum")) {
      Reader cr(*cj, "trainer.curriculum");
      cr.get("enabled", t.curriculum.enabled);
      cr.get("initial_width", t.curriculum.initial_width);
      cr.get("expand_steps", t.curriculum.expand_steps);
      cr.finish();
    }
    if (const Json* fj = s.child("first_stage")) {
      Reader fr(*fj, "trainer.first_stage");
      fr.get("steps", t.first_stage.steps);
      fr.get("batch_size", t.first_stage.batch_size);
      fr.get("lr", t.first_stage.lr);
      fr.get("ema_decay", t.first_stage.ema_decay);
      fr.get("welford_batches", t.first_stage.welford_batches);
      fr.finish();
    }
  });
  sub("sampler", [&](Reader& s) {
    s.get_enum("kind", c.sampler.kind, parse_sampler_kind);
    s.get("steps", c.sampler.steps);
    s.get("seed", c.sampler.seed);
    s.get("n", c.sampler.n);
  });
  sub("data", [&](Reader& s) {
    s.get("source", c.data.source);
    s.get("n", c.data.mixture.n);
    s.get("modes", c.data.mixture.modes);
    s.get("radius", c.data.mixture.radius);
    s.get("std", c.data.mixture.std);
    s.get("seed", c.data.mixture.seed);
    s.get("labeled", c.data.mixture.labeled);
    s.get("heldout_n", c.data.heldout_n);
    s.get("heldout_seed", c.data.heldout_seed);
    s.get("path", c.data.path);
    s.get("heldout_path", c.data.heldout_path);
  });
  sub("analysis", [&](Reader& s) {
    s.get("t_grid", c.analysis.t_grid);
    s.get("n_mc", c.analysis.n_mc);
    s.get("eval_n", c.analysis.eval_n);
    s.get("null_resamples", c.analysis.null_resamples);
    s.get("energy_n", c.analysis.energy_n);
    s.get("ddim_steps", c.analysis.ddim_steps);
    s.get("interpolate_points", c.analysis.interpolate_points);
    s.get("seed", c.analysis.seed);
  });
  r.finish();
  c.validate();
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "': expected key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty path component");
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    try {
      doc = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config: " + path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace lrdm
