// SPDX-License-Identifier: Apache-2.0
#include "lrdm/analysis.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "lrdm/kernels.hpp"
#include "lrdm/objectives.hpp"
#include "lrdm/rng.hpp"

namespace lrdm {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t k) {
  // splitmix64 step, so neighbouring streams are unrelated
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double mean_sq_dist(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return acc;
}

}  // namespace

DistortionCurve distortion_curve(const Schedule& s, const Predictor& predict, Parameterization p,
                                 const Matrix& z0, std::span<const int> t_grid, int n_mc,
                                 std::uint64_t seed, const FirstStage* first_stage, const Matrix* x0,
                                 const ReprProvider* repr) {
  if (n_mc < 1) throw std::invalid_argument("distortion_curve: n_mc must be >= 1");
  const bool data_space = first_stage && !first_stage->identity() && x0;
  if (data_space && x0->rows != z0.rows) throw std::invalid_argument("distortion_curve: x0 / z0 row mismatch");
  const std::size_t G = t_grid.size();
  DistortionCurve c;
  c.t.assign(t_grid.begin(), t_grid.end());
  c.z0_rmse.assign(G, 0.0);
  if (data_space) c.x0_rmse.assign(G, 0.0);
  c.count.assign(G, z0.rows * static_cast<std::size_t>(n_mc));
  for (int t : c.t) {
    if (t < 1 || t > s.T()) throw std::out_of_range("distortion_curve: t outside [1, T]");
  }
  std::vector<Matrix> reprs(G);
  if (repr) {
    for (std::size_t g = 0; g < G; ++g) reprs[g] = (*repr)(c.t[g]);
  }

  std::optional<std::string> failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t g = 0; g < G; ++g) {
    try {
      const int t = c.t[g];
      Rng rng(stream_seed(seed, static_cast<std::uint64_t>(t)));
      const std::vector<int> ts(z0.rows, t);
      double sz = 0.0, sx = 0.0;
      Matrix eps(z0.rows, z0.cols);
      for (int k = 0; k < n_mc; ++k) {
        rng.fill_normal(eps.data);
        const Matrix xt = q_sample(s, z0, ts, eps);
        const Matrix pred = predict(xt, t, repr ? &reprs[g] : nullptr);
        const Matrix z0_hat = prediction_to_x0(s, xt, pred, ts, p);
        sz += mean_sq_dist(z0, z0_hat);
        if (data_space) sx += mean_sq_dist(*x0, first_stage->decode(z0_hat));
      }
      const double n = static_cast<double>(c.count[g]);
      c.z0_rmse[g] = std::sqrt(sz / n);
      if (data_space) c.x0_rmse[g] = std::sqrt(sx / n);
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (failure) throw std::runtime_error("distortion_curve: " + *failure);
  return c;
}

void write_distortion_csv(std::ostream& os, const DistortionCurve& c) {
  os << "t,z0_rmse,x0_rmse,count\n";
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    os << fmt::format("{},{},{},{}\n", c.t[i], c.z0_rmse[i],
                      c.x0_rmse.empty() ? std::string() : fmt::format("{}", c.x0_rmse[i]), c.count[i]);
  }
}

KlCurve kl_curve(const ReprEncoder& enc, const Matrix& z0, std::span<const int> t_grid,
                 std::span<const int> labels) {
  if (!enc.config().timestep_conditional) {
    throw std::invalid_argument("kl_curve: encoder is not timestep-conditional");
  }
  KlCurve c;
  c.t.assign(t_grid.begin(), t_grid.end());
  c.kl.assign(t_grid.size(), 0.0);
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    Tape tape(false);
    const std::vector<int> ts(z0.rows, t_grid[g]);
    const GaussianHeads h = enc.encode(tape, tape.constant(z0), ts, labels);
    c.kl[g] = kl_standard_normal(h.mu, h.logvar).item();
  }
  return c;
}

void write_kl_csv(std::ostream& os, const KlCurve& c) {
  os << "t,kl\n";
  for (std::size_t i = 0; i < c.t.size(); ++i) os << fmt::format("{},{}\n", c.t[i], c.kl[i]);
}

Vec slerp(std::span<const double> a, std::span<const double> b, double tau) {
  if (a.size() != b.size()) throw std::invalid_argument("slerp: dimension mismatch");
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    dot += a[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("slerp: zero vector has no direction");
  if (tau == 0.0) return {a.begin(), a.end()};
  if (tau == 1.0) return {b.begin(), b.end()};
  const double cos_omega = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  const double omega = std::acos(cos_omega);
  Vec out(a.size());
  if (omega < 1e-6) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - tau) * a[i] + tau * b[i];
    return out;
  }
  const double so = std::sin(omega);
  const double wa = std::sin((1.0 - tau) * omega) / so;
  const double wb = std::sin(tau * omega) / so;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = wa * a[i] + wb * b[i];
  return out;
}

Matrix slerp_rows(const Matrix& a, const Matrix& b, double tau) {
  if (!a.same_shape(b)) throw std::invalid_argument("slerp_rows: shape mismatch");
  Matrix out(a.rows, a.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const Vec v = slerp(a.row(r), b.row(r), tau);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

// ------------------------------------------------------------ reconstruction

namespace {

struct Codes {
  std::vector<Matrix> repr;  // one matrix (constant) or one per timestep 1..T (t-LRDM)
  Matrix z_T;
};

std::span<const int> enc_labels(const ModelBundle& b, const std::vector<int>& labels) {
  return b.config.encoder.num_classes > 0 ? std::span<const int>(labels) : std::span<const int>{};
}

std::vector<int> sampling_labels(const ModelBundle& b, const ReconstructOptions& opt) {
  if (b.config.denoiser.num_classes == 0) return {};
  return opt.sample_labels.empty() ? opt.labels : opt.sample_labels;
}

std::vector<int> sampler_steps(const ModelBundle& b, const ReconstructOptions& opt) {
  if (opt.sampler == SamplerKind::Ancestral || opt.steps == 0) return {};
  return strided_steps(b.schedule.T(), opt.steps);
}

// Representation codes for z0: the posterior mode, or a posterior draw.
std::vector<Matrix> encode_codes(const ModelBundle& b, const Matrix& z0, const ReconstructOptions& opt,
                                 Rng& rng) {
  if (!b.encoder) return {};
  const auto labels = enc_labels(b, opt.labels);
  const bool per_t = b.config.encoder.timestep_conditional;
  std::vector<Matrix> out;
  const int count = per_t ? b.schedule.T() : 1;
  for (int k = 0; k < count; ++k) {
    Tape tape(false);
    const std::vector<int> ts = per_t ? std::vector<int>(z0.rows, k + 1) : std::vector<int>{};
    const GaussianHeads h = b.encoder->encode(tape, tape.constant(z0), ts, labels);
    Matrix r = h.mu.to_matrix();
    if (opt.sample_repr) {
      const Matrix lv = h.logvar.to_matrix();
      for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] += std::exp(0.5 * lv.data[i]) * rng.normal();
    }
    out.push_back(std::move(r));
  }
  return out;
}

ReprProvider make_provider(const std::vector<Matrix>& codes) {
  return [&codes](int t) -> Matrix { return codes.size() == 1 ? codes[0] : codes.at(static_cast<std::size_t>(t - 1)); };
}

Codes encode_all(const ModelBundle& b, const Matrix& z0, const ReconstructOptions& opt) {
  Rng rng(opt.seed ^ 0x5eed5eedULL);
  Codes c;
  c.repr = encode_codes(b, z0, opt, rng);
  if (opt.z_T == LatentSource::Invert) {
    const ReprProvider provider = make_provider(c.repr);
    const std::vector<int> steps = opt.steps > 0 ? strided_steps(b.schedule.T(), opt.steps) : std::vector<int>{};
    c.z_T = ddim_invert(b.schedule, b.predictor(sampling_labels(b, opt)), b.config.parameterization, z0, steps,
                        b.encoder ? &provider : nullptr);
  } else {
    c.z_T = Matrix(z0.rows, z0.cols);
    rng.fill_normal(c.z_T.data);
  }
  return c;
}

Matrix decode_codes(const ModelBundle& b, const Codes& c, const ReconstructOptions& opt) {
  SamplerConfig sc;
  sc.kind = opt.sampler;
  sc.steps = sampler_steps(b, opt);
  sc.seed = opt.seed;
  sc.variance = b.config.variance;
  const ReprProvider provider = make_provider(c.repr);
  const SampleTrace trace = sample_loop(b.schedule, b.predictor(sampling_labels(b, opt)),
                                        b.config.parameterization, sc, c.z_T,
                                        b.encoder ? &provider : nullptr);
  return b.first_stage.decode(trace.final);
}

}  // namespace

Matrix reconstruct(const ModelBundle& b, const Matrix& x, const ReconstructOptions& opt) {
  const Matrix z0 = b.first_stage.encode(x);
  return decode_codes(b, encode_all(b, z0, opt), opt);
}

Matrix interpolate_pair(const ModelBundle& b, std::span<const double> xa, std::span<const double> xb,
                        std::size_t n_points, const ReconstructOptions& opt) {
  if (n_points < 2) throw std::invalid_argument("interpolate_pair: need at least 2 points");
  if (xa.size() != xb.size()) throw std::invalid_argument("interpolate_pair: dimension mismatch");
  Matrix x(2, xa.size());
  std::copy(xa.begin(), xa.end(), x.row(0).begin());
  std::copy(xb.begin(), xb.end(), x.row(1).begin());
  const Codes ends = encode_all(b, b.first_stage.encode(x), opt);

  auto path = [n_points](const Matrix& m) {
    Matrix out(n_points, m.cols);
    for (std::size_t i = 0; i < n_points; ++i) {
      const double tau = static_cast<double>(i) / static_cast<double>(n_points - 1);
      const Vec v = slerp(m.row(0), m.row(1), tau);
      std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
  };
  Codes c;
  c.z_T = path(ends.z_T);
  for (const Matrix& r : ends.repr) c.repr.push_back(path(r));

  ReconstructOptions o = opt;
  auto expand = [n_points](const std::vector<int>& l) {
    if (l.empty()) return l;
    if (l.size() != 2) throw std::invalid_argument("interpolate_pair: need one label per endpoint");
    std::vector<int> out(n_points, l[0]);
    for (std::size_t i = n_points / 2; i < n_points; ++i) out[i] = l[1];
    return out;
  };
  o.labels = expand(opt.labels);
  o.sample_labels = expand(opt.sample_labels);
  return decode_codes(b, c, o);
}

Matrix generate(const ModelBundle& b, std::size_t n, const SamplerConfig& cfg, std::vector<int> labels,
                const Matrix* repr) {
  if (b.config.denoiser.num_classes > 0 && labels.size() != n) {
    throw std::invalid_argument("generate: class-conditional model needs " + std::to_string(n) + " labels, got " +
                                std::to_string(labels.size()));
  }
  if (b.config.denoiser.num_classes == 0 && !labels.empty()) {
    throw std::invalid_argument("generate: labels given but the " + std::string(to_string(b.config.kind)) +
                                " checkpoint is not class-conditional");
  }
  const std::size_t dim = b.first_stage.latent_dim();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix x_T(n, dim);
  rng.fill_normal(x_T.data);
  std::vector<Matrix> codes;
  if (b.encoder) {
    Matrix r(n, b.config.encoder.repr_dim);
    if (repr) {
      if (!repr->same_shape(r)) throw std::invalid_argument("generate: representation shape mismatch");
      r = *repr;
    } else {
      rng.fill_normal(r.data);
    }
    codes.push_back(std::move(r));
  } else if (repr) {
    throw std::invalid_argument("generate: representation given but the checkpoint is unconditional");
  }
  const ReprProvider provider = make_provider(codes);
  const SampleTrace trace = sample_loop(b.schedule, b.predictor(std::move(labels)), b.config.parameterization, cfg,
                                        std::move(x_T), b.encoder ? &provider : nullptr);
  return b.first_stage.decode(trace.final);
}

ReconstructionStats reconstruction_stats(const ModelBundle& b, const Matrix& x, int repeats, int ddim_steps,
                                         std::uint64_t seed, std::span<const int> labels) {
  if (repeats < 1) throw std::invalid_argument("reconstruction_stats: repeats must be >= 1");
  ReconstructOptions opt;
  opt.sampler = SamplerKind::Ddim;
  opt.steps = ddim_steps;
  opt.z_T = LatentSource::Prior;
  opt.labels.assign(labels.begin(), labels.end());
  std::vector<Matrix> recs;
  for (int k = 0; k < repeats; ++k) {
    opt.seed = stream_seed(seed, static_cast<std::uint64_t>(k));
    recs.push_back(reconstruct(b, x, opt));
  }
  ReconstructionStats st;
  double se = 0.0;
  for (const Matrix& r : recs) se += mean_sq_dist(x, r);
  st.mse = se / (static_cast<double>(x.rows) * repeats);
  st.rmse = std::sqrt(st.mse);
  if (repeats > 1) {
    double var = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      double m = 0.0;
      for (const Matrix& r : recs) m += r.data[i];
      m /= repeats;
      double v = 0.0;
      for (const Matrix& r : recs) v += (r.data[i] - m) * (r.data[i] - m);
      var += v / (repeats - 1);
    }
    st.variance = var / static_cast<double>(x.rows);
  }
  return st;
}

// ----------------------------------------------------------------------- PCA

PcaGrid pca_grid(const Matrix& encoded, std::size_t grid_n, double extent) {
  const std::size_t n = encoded.rows;
  const std::size_t R = encoded.cols;
  if (grid_n == 0) throw std::invalid_argument("pca_grid: grid_n must be positive");
  if (R < 2) throw std::invalid_argument("pca_grid: need at least 2 representation dims");
  if (n < R) {
    throw std::invalid_argument("pca_grid: " + std::to_string(n) + " encoded points for " + std::to_string(R) +
                                " dims");
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
      encoded.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(R));
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mu;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double top = vals.maxCoeff();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] > 1e-12 * std::max(top, 1e-300)) ++rank;
  }
  if (rank < 2 || !(top > 0.0)) {
    throw std::runtime_error("pca_grid: degenerate covariance of rank " + std::to_string(rank) +
                             " (need at least 2)");
  }
  PcaGrid g;
  g.mean.assign(mu.data(), mu.data() + R);
  g.components = Matrix(2, R);
  g.scales.resize(2);
  for (int k = 0; k < 2; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(R) - 1 - k;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (std::size_t j = 0; j < R; ++j) g.components(k, j) = v[static_cast<Eigen::Index>(j)];
    g.scales[k] = std::sqrt(vals[col]);
  }
  g.points = Matrix(grid_n * grid_n, R);
  auto coord = [&](std::size_t i) {
    return grid_n == 1 ? 0.0 : -extent + 2.0 * extent * static_cast<double>(i) / static_cast<double>(grid_n - 1);
  };
  for (std::size_t i = 0; i < grid_n; ++i) {
    for (std::size_t j = 0; j < grid_n; ++j) {
      auto row = g.points.row(i * grid_n + j);
      const double a = coord(i) * g.scales[0];
      const double c = coord(j) * g.scales[1];
      for (std::size_t d = 0; d < R; ++d) row[d] = g.mean[d] + a * g.components(0, d) + c * g.components(1, d);
    }
  }
  return g;
}

// ------------------------------------------------------------------ metrics

Matrix subsample_rows(const Matrix& m, std::size_t n, std::uint64_t seed) {
  if (n >= m.rows) return m;
  std::vector<std::size_t> idx(m.rows);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(m.rows - i - 1)));
    std::swap(idx[i], idx[j]);
  }
  Matrix out(n, m.cols);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(m.row(idx[i]).begin(), m.cols, out.row(i).begin());
  return out;
}

double energy_distance(const Matrix& a_in, const Matrix& b_in, std::uint64_t seed, std::size_t max_points) {
  if (a_in.rows == 0 || b_in.rows == 0) throw std::invalid_argument("energy_distance: empty sample set");
  if (a_in.cols != b_in.cols) {
    throw std::invalid_argument("energy_distance: dimension mismatch " + std::to_string(a_in.cols) + " vs " +
                                std::to_string(b_in.cols));
  }
  const Matrix a = subsample_rows(a_in, max_points, seed);
  const Matrix b = subsample_rows(b_in, max_points, seed);
  const std::size_t d = a.cols;
  const double na = static_cast<double>(a.rows);
  const double nb = static_cast<double>(b.rows);
  using kernels::parallel::pairwise_distance_sum;
  // Both cross orders are summed so that swapping the arguments is exact.
  const double cross = pairwise_distance_sum(a.data.data(), a.rows, b.data.data(), b.rows, d) +
                       pairwise_distance_sum(b.data.data(), b.rows, a.data.data(), a.rows, d);
  const double aa = pairwise_distance_sum(a.data.data(), a.rows, a.data.data(), a.rows, d) / (na * na);
  const double bb = pairwise_distance_sum(b.data.data(), b.rows, b.data.data(), b.rows, d) / (nb * nb);
  return cross / (na * nb) - (aa + bb);
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  if (v.size() % 2 == 1) return v[m];
  const double hi = v[m];
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

}  // namespace lrdm
