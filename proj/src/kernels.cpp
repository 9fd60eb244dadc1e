// SPDX-License-Identifier: Apache-2.0
#include "lrdm/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <vector>

namespace lrdm::kernels {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * m + j];
      c[i * m + j] = acc;
    }
  }
}

void matmul_acc_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
                   std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < m; ++p) acc += a[i * m + p] * b[j * m + p];
      c[i * k + j] += acc;
    }
  }
}

void matmul_acc_at(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t q = 0; q < k; ++q) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += a[i * k + q] * b[i * m + j];
      c[q * m + j] += acc;
    }
  }
}

double pairwise_distance_sum(const double* a, std::size_t na, const double* b, std::size_t nb,
                             std::size_t dim) {
  double total = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      double d2 = 0.0;
      for (std::size_t p = 0; p < dim; ++p) {
        const double d = a[i * dim + p] - b[j * dim + p];
        d2 += d * d;
      }
      total += std::sqrt(d2);
    }
  }
  return total;
}

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_acc_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
                   std::size_t k) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    const double* ai = a + i * m;
    for (std::size_t j = 0; j < k; ++j) {
      const double* bj = b + j * m;
      double acc = 0.0;
      for (std::size_t p = 0; p < m; ++p) acc += ai[p] * bj[p];
      c[i * k + j] += acc;
    }
  }
}

void matmul_acc_at(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  const auto out_rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t sq = 0; sq < out_rows; ++sq) {
    const auto q = static_cast<std::size_t>(sq);
    // summed apart from c so the rounding matches the serial kernel
    std::vector<double> acc(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double aiq = a[i * k + q];
      const double* bi = b + i * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += aiq * bi[j];
    }
    double* cq = c + q * m;
    for (std::size_t j = 0; j < m; ++j) cq[j] += acc[j];
  }
}

double pairwise_distance_sum(const double* a, std::size_t na, const double* b, std::size_t nb,
                             std::size_t dim) {
  std::vector<double> row_sums(na, 0.0);
  const auto rows = static_cast<std::ptrdiff_t>(na);
#pragma omp parallel for schedule(static) if (na * nb * dim > kParallelWork)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    const double* ai = a + i * dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      const double* bj = b + j * dim;
      double d2 = 0.0;
      for (std::size_t p = 0; p < dim; ++p) {
        const double d = ai[p] - bj[p];
        d2 += d * d;
      }
      acc += std::sqrt(d2);
    }
    row_sums[i] = acc;
  }
  double total = 0.0;
  for (double s : row_sums) total += s;
  return total;
}

}  // namespace parallel

int max_threads() { return omp_get_max_threads(); }

}  // namespace lrdm::kernels
