// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "lrdm/bundle.hpp"
#include "lrdm/diffusion.hpp"
#include "lrdm/matrix.hpp"
#include "lrdm/samplers.hpp"

namespace lrdm {

struct DistortionCurve {
  std::vector<int> t;
  std::vector<double> z0_rmse;
  std::vector<double> x0_rmse;  // empty without a (non-identity) first stage
  std::vector<std::size_t> count;
};

/// RMSE sqrt(<||z0 - z0_hat||^2>) of the model's x0 estimate at each grid t,
/// over every row of z0 times n_mc noise draws. Each t uses its own stream
/// derived from `seed`, so the curve does not depend on the thread count.
/// With a first stage, the estimate is also decoded and compared with x0.
DistortionCurve distortion_curve(const Schedule& s, const Predictor& predict, Parameterization p,
                                 const Matrix& z0, std::span<const int> t_grid, int n_mc,
                                 std::uint64_t seed, const FirstStage* first_stage = nullptr,
                                 const Matrix* x0 = nullptr, const ReprProvider* repr = nullptr);
void write_distortion_csv(std::ostream& os, const DistortionCurve& c);

struct KlCurve {
  std::vector<int> t;
  std::vector<double> kl;  // mean over rows of KL summed over repr dims
};

/// Throws if the encoder is not timestep-conditional.
KlCurve kl_curve(const ReprEncoder& enc, const Matrix& z0, std::span<const int> t_grid,
                 std::span<const int> labels = {});
void write_kl_csv(std::ostream& os, const KlCurve& c);

/// Spherical interpolation; falls back to linear when the angle is below 1e-6.
Vec slerp(std::span<const double> a, std::span<const double> b, double tau);
/// Row-wise slerp between two matrices of equal shape.
Matrix slerp_rows(const Matrix& a, const Matrix& b, double tau);

enum class LatentSource { Invert, Prior };

struct ReconstructOptions {
  SamplerKind sampler = SamplerKind::Ddim;
  int steps = 0;                           // DDIM steps, 0 = every timestep
  LatentSource z_T = LatentSource::Invert;
  bool sample_repr = false;                // posterior draw instead of the mode
  std::uint64_t seed = 0;
  std::vector<int> labels;                 // encoder (and default sampling) labels
  std::vector<int> sample_labels;          // denoiser labels; empty = `labels`
};

/// Data-space input -> first stage -> r -> z_T -> reverse process -> decode.
/// For an unconditional bundle there is no r.
Matrix reconstruct(const ModelBundle& b, const Matrix& x, const ReconstructOptions& opt);

/// n_points samples along the slerp path between the (r, z_T) codes of xa
/// and xb. The endpoints equal reconstruct() of the two inputs under the
/// same options (Invert / DDIM).
Matrix interpolate_pair(const ModelBundle& b, std::span<const double> xa, std::span<const double> xb,
                        std::size_t n_points, const ReconstructOptions& opt);

/// Draws from the model: z_T ~ N(0, I) and, for conditional kinds, one
/// r ~ N(0, I) per chain (or the given `repr`), then decodes.
Matrix generate(const ModelBundle& b, std::size_t n, const SamplerConfig& cfg, std::vector<int> labels = {},
                const Matrix* repr = nullptr);

struct ReconstructionStats {
  double mse = 0.0;       // <||x - x_hat||^2>
  double rmse = 0.0;      // sqrt(mse)
  double variance = 0.0;  // mean over points of the summed per-dim variance across repeats
};

/// r = posterior mode, z_T fresh from the prior per repeat, DDIM decoding.
ReconstructionStats reconstruction_stats(const ModelBundle& b, const Matrix& x, int repeats,
                                         int ddim_steps, std::uint64_t seed,
                                         std::span<const int> labels = {});

struct PcaGrid {
  Matrix points;      // grid_n^2 x R
  Vec mean;
  Matrix components;  // 2 x R, unit rows, descending variance
  Vec scales;         // sqrt of the two leading eigenvalues
};

/// Grid on the plane of the top two principal directions of the encoded
/// posterior means, centered on their mean, spanning [-extent, extent]
/// scale units along each axis.
PcaGrid pca_grid(const Matrix& encoded, std::size_t grid_n, double extent);

/// 2 E||a - b|| - E||a - a'|| - E||b - b'|| over all pairs (V-statistic).
/// Sets above `max_points` rows are subsampled without replacement using
/// `seed`. Symmetric in its arguments bit for bit.
double energy_distance(const Matrix& a, const Matrix& b, std::uint64_t seed = 0,
                       std::size_t max_points = 5000);

double spearman(std::span<const double> x, std::span<const double> y);
double median(std::vector<double> v);

/// Uniform subsample of `n` rows without replacement (all rows if n >= rows).
Matrix subsample_rows(const Matrix& m, std::size_t n, std::uint64_t seed);

}  // namespace lrdm
