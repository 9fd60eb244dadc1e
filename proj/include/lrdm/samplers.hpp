// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "lrdm/matrix.hpp"
#include "lrdm/models.hpp"
#include "lrdm/schedule.hpp"

namespace lrdm {

/// Network output for a batch whose rows all sit at timestep `t`. `repr` is
/// the representation for this step (null for unconditional nets).
using Predictor = std::function<Matrix(const Matrix& x_t, int t, const Matrix* repr)>;
/// Representation used at step t: constant for the LRDM, recomputed per
/// step for the t-LRDM.
using ReprProvider = std::function<Matrix(int t)>;

/// Wraps a denoiser in eval mode (no dropout, no tape). `labels` must hold
/// one class id per row for class-conditional nets.
Predictor net_predictor(const DenoiserNet& net, std::vector<int> labels = {});

enum class SamplerKind { Ancestral, Ddim };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Ancestral;
  std::vector<int> steps;  // ascending subsequence of 1..T; empty = all
  std::uint64_t seed = 0;
  ReverseVariance variance = ReverseVariance::Beta;
};

/// n timesteps with uniform stride over 1..T, ascending, ending at T.
std::vector<int> strided_steps(int T, int n);

struct TraceRecord {
  int t = 0;      // timestep of x_t after the step
  Matrix x_t;
  Matrix x0_hat;  // x0 implied by the prediction that produced this step
};

struct SampleTrace {
  std::vector<TraceRecord> records;  // t strictly decreasing, last t = 0
  Matrix final;
  bool repr_constant = true;  // every step saw the same representation
};

/// One reverse transition x_t -> x_{t-1}. z is ignored at t = 1.
Matrix ancestral_step(const Schedule& s, const Matrix& x_t, int t, const Matrix& prediction,
                      Parameterization p, const Matrix& z,
                      ReverseVariance v = ReverseVariance::Beta);

/// Deterministic DDIM update from t to t_prev (t_prev <= t, 0 = clean data).
Matrix ddim_step(const Schedule& s, const Matrix& x_t, int t, int t_prev,
                 const Matrix& prediction, Parameterization p);

/// Runs the DDIM recursion forward (ascending `steps`) from clean x0 to the
/// last step. Each update uses the prediction at the step being entered.
Matrix ddim_invert(const Schedule& s, const Predictor& predict, Parameterization p,
                   const Matrix& x0, std::span<const int> steps,
                   const ReprProvider* repr = nullptr);

/// Reverse process from the given x_T.
SampleTrace sample_loop(const Schedule& s, const Predictor& predict, Parameterization p,
                        const SamplerConfig& cfg, Matrix x_T, const ReprProvider* repr = nullptr,
                        bool record = false);
/// Reverse process from x_T ~ N(0, I) drawn with cfg.seed.
SampleTrace sample_loop(const Schedule& s, const Predictor& predict, Parameterization p,
                        const SamplerConfig& cfg, std::size_t n, std::size_t dim,
                        const ReprProvider* repr = nullptr, bool record = false);

/// Rows `step_index,t,<x_t...>,<x0_hat...>`; one row per record and chain.
void write_trace_csv(std::ostream& os, const SampleTrace& trace);

}  // namespace lrdm
