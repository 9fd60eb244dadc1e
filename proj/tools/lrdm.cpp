// SPDX-License-Identifier: Apache-2.0
// lrdm: train, sample, reconstruct, interpolate, evaluate and dump schedules.

#include <fmt/format.h>
#include <omp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lrdm/analysis.hpp"
#include "lrdm/config.hpp"
#include "lrdm/data_io.hpp"
#include "lrdm/trainer.hpp"

namespace fs = std::filesystem;
using namespace lrdm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  const char* env = std::getenv("LRDM_OUT");
  return env && *env ? fs::path(env) : fs::current_path();
}

fs::path resolve_out(const std::string& out) {
  const fs::path p(out);
  return p.is_absolute() ? p : output_root() / p;
}

void refuse_overwrite(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) {
    throw UsageError("'" + p.string() + "' exists; pass --force to overwrite");
  }
}

std::ofstream open_out(const fs::path& p, bool force) {
  refuse_overwrite(p, force);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  return f;
}

struct Data {
  Dataset train;
  Dataset heldout;
};

Data load_data(const RunConfig& cfg) {
  Data d;
  if (cfg.data.source == "mixture") {
    d.train = make_mixture(cfg.data.mixture, Split::Train);
    MixtureSpec h = cfg.data.mixture;
    h.n = cfg.data.heldout_n;
    h.seed = cfg.data.heldout_seed;
    d.heldout = make_mixture(h, Split::Heldout);
  } else {
    d.train = load_csv_dataset(cfg.data.path, cfg.data.mixture.labeled);
    if (!cfg.data.heldout_path.empty()) {
      d.heldout = load_csv_dataset(cfg.data.heldout_path, cfg.data.mixture.labeled);
      d.heldout.split = Split::Heldout;
    } else {
      d.heldout = d.train;
    }
  }
  return d;
}

// Model config with the dimensions that come from the data and trainer.
ModelConfig resolved_model(const RunConfig& cfg, const Dataset& data) {
  ModelConfig m = cfg.model;
  m.first_stage.data_dim = data.dim();
  m.denoiser.dropout = cfg.trainer.resolved_dropout(m.kind);
  if (m.denoiser.num_classes > 0 && !data.labeled()) {
    throw ConfigError("model.denoiser.num_classes: class-conditional model needs data.labeled = true");
  }
  return m;
}

RunConfig config_from_checkpoint(const fs::path& ckpt) {
  return run_config_from_json(Json::parse(checkpoint_extra(ckpt)));
}

ModelBundle load_for_eval(const fs::path& ckpt, bool no_ema) {
  ModelBundle b = load_checkpoint(ckpt);
  return no_ema ? b : b.ema_snapshot();
}

std::vector<int> parse_labels(const std::optional<int>& label, std::size_t n) {
  return label ? std::vector<int>(n, *label) : std::vector<int>{};
}

void require_conditional(const ModelBundle& b, const std::string& command) {
  if (!b.encoder) {
    throw UsageError(command + " needs a representation model (lrdm, t-lrdm or lvae); checkpoint is " +
                     std::string(to_string(b.config.kind)));
  }
}

SamplerKind parse_sampler(const std::string& s) {
  if (s == "ddim") return SamplerKind::Ddim;
  if (s == "ancestral") return SamplerKind::Ancestral;
  throw UsageError("unknown sampler '" + s + "' (expected ddim|ancestral)");
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "run";
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.overrides);
  const Data data = load_data(cfg);
  const ModelConfig model = resolved_model(cfg, data.train);

  const fs::path dir = resolve_out(a.out);
  const fs::path ckpt = dir / "checkpoint.lrdm";
  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path echo = dir / "config.json";
  for (const auto& p : {ckpt, metrics_path, echo}) refuse_overwrite(p, a.force);
  fs::create_directories(dir);

  const std::string echo_json = to_json(cfg).dump(2);
  {
    std::ofstream f(echo);
    f << echo_json << '\n';
  }
  TrainConfig tc = cfg.trainer.train;
  tc.checkpoint_path = ckpt;
  tc.checkpoint_extra = to_json(cfg).dump();
  ModelBundle b = ModelBundle::create(model, cfg.schedule.resolve(), tc.seed, tc.ema_decay, tc.ema_warmup);
  std::ofstream metrics(metrics_path);
  const auto log = train(tc, b, data.train, &metrics);
  if (!log.empty()) {
    const auto& last = log.back();
    fmt::print(stderr, "trained {} for {} steps; final loss {:.6g}\n", to_string(model.kind), b.state.step,
               last.loss_total);
  }
  fmt::print("{}\n", dir.string());
  return kExitOk;
}

// ----------------------------------------------------------------- sample

struct SampleArgs {
  std::string checkpoint;
  std::size_t n = 1000;
  std::string sampler = "ddim";
  int steps = 0;
  std::uint64_t seed = 0;
  std::optional<int> label;
  std::string out = "samples.csv";
  bool force = false;
  bool no_ema = false;
  bool trace = false;
};

int cmd_sample(const SampleArgs& a) {
  const ModelBundle b = load_for_eval(a.checkpoint, a.no_ema);
  SamplerConfig sc;
  sc.kind = parse_sampler(a.sampler);
  if (a.steps > 0 && a.steps != b.schedule.T()) {
    if (sc.kind == SamplerKind::Ancestral) throw UsageError("--steps needs --sampler ddim");
    sc.steps = strided_steps(b.schedule.T(), a.steps);
  }
  sc.seed = a.seed;
  sc.variance = b.config.variance;
  if (a.label && b.config.denoiser.num_classes == 0) {
    throw UsageError("--label given but the " + std::string(to_string(b.config.kind)) +
                     " checkpoint is not class-conditional");
  }
  if (!a.label && b.config.denoiser.num_classes > 0) throw UsageError("class-conditional checkpoint needs --label");
  const Matrix x = generate(b, a.n, sc, parse_labels(a.label, a.n));
  const fs::path out = resolve_out(a.out);
  auto f = open_out(out, a.force);
  std::string header;
  for (std::size_t c = 0; c < x.cols; ++c) header += (c ? ",x" : "x") + std::to_string(c);
  write_matrix_csv(f, x, header);
  if (a.trace) {
    if (b.encoder) throw UsageError("--trace is only available for unconditional checkpoints");
    Rng rng(sc.seed ^ 0x9e3779b97f4a7c15ULL);
    Matrix x_T(a.n, b.first_stage.latent_dim());
    rng.fill_normal(x_T.data);
    const SampleTrace tr = sample_loop(b.schedule, b.predictor(parse_labels(a.label, a.n)),
                                       b.config.parameterization, sc, x_T, nullptr, true);
    auto tf = open_out(fs::path(out.string() + ".trace.csv"), a.force);
    write_trace_csv(tf, tr);
  }
  return kExitOk;
}

// ------------------------------------------- reconstruct / interpolate

struct CodeArgs {
  std::string checkpoint;
  std::string input;
  bool has_labels = false;
  std::string mode = "ddim";
  int steps = 0;
  std::uint64_t seed = 0;
  std::optional<int> swap_label;
  std::size_t points = 10;
  std::string out;
  bool force = false;
  bool no_ema = false;
};

ReconstructOptions code_options(const CodeArgs& a, const Dataset& in, const ModelBundle& b) {
  ReconstructOptions o;
  if (a.mode == "ddim") {
    o.sampler = SamplerKind::Ddim;
    o.z_T = LatentSource::Invert;
    o.steps = a.steps;
  } else if (a.mode == "ancestral") {
    o.sampler = SamplerKind::Ancestral;
    o.z_T = LatentSource::Prior;
    if (a.steps != 0 && a.steps != b.schedule.T()) throw UsageError("--steps needs --mode ddim");
  } else {
    throw UsageError("unknown --mode '" + a.mode + "' (expected ddim|ancestral)");
  }
  o.seed = a.seed;
  if (b.config.denoiser.num_classes > 0) {
    if (!in.labeled()) throw UsageError("class-conditional checkpoint needs --has-labels input");
    o.labels = in.labels;
    if (a.swap_label) o.sample_labels.assign(in.size(), *a.swap_label);
  } else if (a.swap_label) {
    throw UsageError("--label given but the checkpoint is not class-conditional");
  }
  return o;
}

int cmd_reconstruct(const CodeArgs& a) {
  const ModelBundle b = load_for_eval(a.checkpoint, a.no_ema);
  require_conditional(b, "reconstruct");
  const Dataset in = load_csv_dataset(a.input, a.has_labels);
  const Matrix rec = reconstruct(b, in.points, code_options(a, in, b));
  auto f = open_out(resolve_out(a.out.empty() ? "reconstruction.csv" : a.out), a.force);
  std::string header;
  for (std::size_t c = 0; c < rec.cols; ++c) header += (c ? ",x" : "x") + std::to_string(c);
  write_matrix_csv(f, rec, header);
  return kExitOk;
}

int cmd_interpolate(const CodeArgs& a) {
  const ModelBundle b = load_for_eval(a.checkpoint, a.no_ema);
  require_conditional(b, "interpolate");
  const Dataset in = load_csv_dataset(a.input, a.has_labels);
  if (in.size() < 2) throw UsageError("interpolate needs an input file with at least two rows");
  Dataset ends;
  ends.points = Matrix(2, in.dim());
  std::copy_n(in.points.data.begin(), 2 * in.dim(), ends.points.data.begin());
  if (in.labeled()) ends.labels = {in.labels[0], in.labels[1]};
  const ReconstructOptions o = code_options(a, ends, b);
  const Matrix path = interpolate_pair(b, ends.points.row(0), ends.points.row(1), a.points, o);
  auto f = open_out(resolve_out(a.out.empty() ? "interpolation.csv" : a.out), a.force);
  std::string header;
  for (std::size_t c = 0; c < path.cols; ++c) header += (c ? ",x" : "x") + std::to_string(c);
  write_matrix_csv(f, path, header);
  return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> overrides;
  std::string out = "eval";
  bool force = false;
  bool no_ema = false;
};

int cmd_eval(const EvalArgs& a) {
  Json doc = Json::parse(checkpoint_extra(a.checkpoint));
  for (const auto& o : a.overrides) apply_override(doc, o);
  const RunConfig cfg = run_config_from_json(doc);
  const ModelBundle b = load_for_eval(a.checkpoint, a.no_ema);
  const Data data = load_data(cfg);
  const AnalysisSection& an = cfg.analysis;

  const fs::path dir = resolve_out(a.out);
  const fs::path distortion_path = dir / "distortion.csv";
  const fs::path kl_path = dir / "kl.csv";
  const fs::path summary_path = dir / "summary.json";
  for (const auto& p : {distortion_path, kl_path, summary_path}) refuse_overwrite(p, a.force);
  fs::create_directories(dir);

  const Matrix x_eval = subsample_rows(data.heldout.points, an.eval_n, an.seed);
  std::vector<int> labels_eval;
  if (data.heldout.labeled()) {
    // Same row selection as subsample_rows, applied to the labels.
    Matrix idx(data.heldout.size(), 1);
    for (std::size_t i = 0; i < idx.rows; ++i) idx(i, 0) = static_cast<double>(i);
    const Matrix picked = subsample_rows(idx, an.eval_n, an.seed);
    for (double v : picked.data) labels_eval.push_back(data.heldout.labels[static_cast<std::size_t>(v)]);
  }
  const std::span<const int> enc_labels =
      b.config.encoder.num_classes > 0 ? std::span<const int>(labels_eval) : std::span<const int>{};
  const Matrix z_eval = b.first_stage.encode(x_eval);
  std::vector<int> grid = an.t_grid;
  if (grid.empty()) {
    grid.resize(static_cast<std::size_t>(b.schedule.T()));
    std::iota(grid.begin(), grid.end(), 1);
  }

  Json summary = Json::object();
  summary["kind"] = to_string(b.config.kind);
  summary["step"] = b.state.step;

  // Distortion curve (posterior-mode r for conditional kinds).
  std::vector<Matrix> codes;
  if (b.encoder) {
    if (b.config.encoder.timestep_conditional) {
      for (int t = 1; t <= b.schedule.T(); ++t) {
        codes.push_back(b.encode_mean(z_eval, std::vector<int>(z_eval.rows, t), enc_labels));
      }
    } else {
      codes.push_back(b.encode_mean(z_eval, {}, enc_labels));
    }
  }
  const ReprProvider provider = [&codes](int t) {
    return codes.size() == 1 ? codes[0] : codes.at(static_cast<std::size_t>(t - 1));
  };
  const std::vector<int> dn_labels = b.config.denoiser.num_classes > 0 ? labels_eval : std::vector<int>{};
  const DistortionCurve dc =
      distortion_curve(b.schedule, b.predictor(dn_labels), b.config.parameterization, z_eval, grid, an.n_mc,
                       an.seed, &b.first_stage, &x_eval, b.encoder ? &provider : nullptr);
  {
    std::ofstream f(distortion_path);
    write_distortion_csv(f, dc);
  }
  summary["distortion_spearman"] =
      spearman(std::vector<double>(dc.t.begin(), dc.t.end()), dc.z0_rmse);

  if (b.config.kind == ModelKind::TLrdm) {
    const KlCurve kc = kl_curve(*b.encoder, z_eval, grid, enc_labels);
    std::ofstream f(kl_path);
    write_kl_csv(f, kc);
    summary["kl_first"] = kc.kl.front();
    summary["kl_last"] = kc.kl.back();
  }
  if (b.encoder && !b.config.encoder.timestep_conditional) {
    const auto kl = b.encoder_kl(z_eval, {}, enc_labels);
    summary["kl_per_dim"] = std::accumulate(kl.begin(), kl.end(), 0.0) / static_cast<double>(kl.size()) /
                            static_cast<double>(b.config.encoder.repr_dim);
    const ReconstructionStats rs = reconstruction_stats(b, x_eval, 4, an.ddim_steps, an.seed, labels_eval);
    summary["recon_mse"] = rs.mse;
    summary["recon_rmse"] = rs.rmse;
    summary["recon_variance"] = rs.variance;
  }

  // Unconditional sampling quality vs held-out data, with its null.
  if (b.config.denoiser.num_classes == 0) {
    SamplerConfig sc;
    sc.kind = cfg.sampler.kind;
    if (cfg.sampler.steps > 0 && cfg.sampler.steps != b.schedule.T()) {
      sc.steps = strided_steps(b.schedule.T(), cfg.sampler.steps);
    }
    sc.seed = cfg.sampler.seed;
    sc.variance = b.config.variance;
    const Matrix samples = generate(b, an.energy_n, sc);
    const Matrix ref = subsample_rows(data.heldout.points, an.energy_n, an.seed + 1);
    summary["energy_distance"] = energy_distance(samples, ref, an.seed);
    if (cfg.data.source == "mixture") {
      std::vector<double> null;
      for (std::size_t k = 0; k < an.null_resamples; ++k) {
        MixtureSpec s1 = cfg.data.mixture, s2 = cfg.data.mixture;
        s1.n = s2.n = an.energy_n;
        s1.seed = 1000003ULL * (k + 1) + 17;
        s2.seed = 1000003ULL * (k + 1) + 29;
        null.push_back(energy_distance(make_mixture(s1).points, make_mixture(s2).points, an.seed));
      }
      summary["energy_null_median"] = median(null);
    }
  }
  std::ofstream(summary_path) << summary.dump(2) << '\n';
  fmt::print("{}\n", summary.dump());
  return kExitOk;
}

// --------------------------------------------------------------- schedule

struct ScheduleArgs {
  int T = 100;
  std::optional<double> beta1;
  std::optional<double> betaT;
  std::string out = "-";
  bool force = false;
};

int cmd_schedule(const ScheduleArgs& a) {
  if (a.T < 2) throw UsageError("--T must be >= 2");
  const auto [b1, bT] = default_linear_endpoints(a.T);
  const double beta1 = a.beta1.value_or(b1);
  const double betaT = a.betaT.value_or(bT);
  if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0)) {
    throw UsageError(fmt::format("schedule endpoints beta1={} betaT={} are invalid (need 0 < beta1 <= betaT < 1); "
                                 "pass --beta1/--betaT explicitly for short chains",
                                 beta1, betaT));
  }
  const Schedule s = Schedule::linear(a.T, beta1, betaT);
  if (a.out == "-") {
    write_schedule_csv(std::cout, s);
  } else {
    auto f = open_out(resolve_out(a.out), a.force);
    write_schedule_csv(f, s);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion models with learned representations on toy data"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "Worker threads for sampling chains and eval shards (0: OpenMP default)")
      ->check(CLI::NonNegativeNumber);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config");
  train_cmd->add_option("--config", ta.config, "JSON config (defaults when omitted)");
  train_cmd->add_option("--set", ta.overrides, "Override, e.g. --set trainer.lambda=1e-3");
  train_cmd->add_option("--out", ta.out, "Output directory (relative to $LRDM_OUT)");
  train_cmd->add_flag("--force", ta.force, "Overwrite existing artifacts");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample_cmd->add_option("--checkpoint", sa.checkpoint)->required();
  sample_cmd->add_option("--n", sa.n)->check(CLI::PositiveNumber);
  sample_cmd->add_option("--sampler", sa.sampler, "ddim | ancestral");
  sample_cmd->add_option("--steps", sa.steps, "DDIM steps (0: all)");
  sample_cmd->add_option("--seed", sa.seed);
  sample_cmd->add_option("--label", sa.label, "Class for class-conditional checkpoints");
  sample_cmd->add_option("--out", sa.out);
  sample_cmd->add_flag("--force", sa.force);
  sample_cmd->add_flag("--no-ema", sa.no_ema, "Use live instead of EMA weights");
  sample_cmd->add_flag("--trace", sa.trace, "Also write the per-step trajectory");

  CodeArgs ra;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Encode and decode data points");
  CodeArgs ia;
  auto* int_cmd = app.add_subcommand("interpolate", "Slerp between the first two rows of a file");
  for (auto [cmd, args] : {std::pair{rec_cmd, &ra}, std::pair{int_cmd, &ia}}) {
    cmd->add_option("--checkpoint", args->checkpoint)->required();
    cmd->add_option("--input", args->input, "CSV of data points")->required();
    cmd->add_flag("--has-labels", args->has_labels, "Last input column is a class label");
    cmd->add_option("--mode", args->mode, "ddim (inverted z_T) | ancestral (prior z_T)");
    cmd->add_option("--steps", args->steps, "DDIM steps (0: all)");
    cmd->add_option("--seed", args->seed);
    cmd->add_option("--label", args->swap_label, "Decode with this class instead of the input's");
    cmd->add_option("--out", args->out);
    cmd->add_flag("--force", args->force);
    cmd->add_flag("--no-ema", args->no_ema);
  }
  int_cmd->add_option("--points", ia.points)->check(CLI::Range(2, 100000));

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Distortion / KL curves, reconstruction and sample metrics");
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required();
  eval_cmd->add_option("--set", ea.overrides, "Override the echoed config, e.g. --set analysis.n_mc=8");
  eval_cmd->add_option("--out", ea.out);
  eval_cmd->add_flag("--force", ea.force);
  eval_cmd->add_flag("--no-ema", ea.no_ema);

  ScheduleArgs sca;
  auto* sched_cmd = app.add_subcommand("schedule", "Dump the noise schedule and loss weights");
  sched_cmd->add_option("--T", sca.T);
  sched_cmd->add_option("--beta1", sca.beta1);
  sched_cmd->add_option("--betaT", sca.betaT);
  sched_cmd->add_option("--out", sca.out, "File, or - for stdout");
  sched_cmd->add_flag("--force", sca.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  if (jobs > 0) omp_set_num_threads(jobs);

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*sample_cmd) return cmd_sample(sa);
    if (*rec_cmd) return cmd_reconstruct(ra);
    if (*int_cmd) return cmd_interpolate(ia);
    if (*eval_cmd) return cmd_eval(ea);
    if (*sched_cmd) return cmd_schedule(sca);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
