// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lrdm/autodiff.hpp"
#include "lrdm/matrix.hpp"
#include "lrdm/models.hpp"
#include "lrdm/rng.hpp"

namespace lrdm::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -2.0,
                            double hi = 2.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data) v = lo + (hi - lo) * rng.uniform();
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct GradCheck {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  std::size_t nonzero = 0;
};

/// Compares the tape gradient of `loss` (rebuilt on a fresh tape each call)
/// against central differences with step h. Entries where both values and
/// their difference are tiny (< abs_floor) count as agreeing.
inline GradCheck check_gradients(const ParamList& params, const std::function<Var(Tape&)>& loss,
                                 double h = 1e-5, double abs_floor = 1e-7) {
  for (const auto& p : params) p.tensor->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape tape(false);
    return loss(tape).item();
  };
  GradCheck out;
  for (const auto& p : params) {
    auto vals = p.tensor->values();
    const auto grad = p.tensor->grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = eval();
      vals[i] = orig - h;
      const double fm = eval();
      vals[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double diff = std::abs(fd - grad[i]);
      out.max_abs_err = std::max(out.max_abs_err, diff);
      const double scale = std::max(std::abs(fd), std::abs(grad[i]));
      if (diff >= abs_floor) out.max_rel_err = std::max(out.max_rel_err, diff / scale);
      if (grad[i] != 0.0) ++out.nonzero;
      ++out.checked;
    }
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::path(LRDM_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lrdm::test
