// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Dense inner loops. `serial` is the straightforward reference kept for
// testing; `parallel` is the OpenMP version the library calls. Every parallel
// kernel partitions over output elements (or rows) and sums each element in a
// fixed order, so results do not depend on the thread count.
namespace lrdm::kernels {

namespace serial {

// c[n,m] = a[n,k] * b[k,m]
void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m);
// c[n,k] += a[n,m] * b[k,m]^T
void matmul_acc_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
                   std::size_t k);
// c[k,m] += a[n,k]^T * b[n,m]
void matmul_acc_at(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m);
// sum over all (i,j) of ||a_i - b_j||, rows of width dim
double pairwise_distance_sum(const double* a, std::size_t na, const double* b, std::size_t nb,
                             std::size_t dim);

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m);
void matmul_acc_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
                   std::size_t k);
void matmul_acc_at(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m);
double pairwise_distance_sum(const double* a, std::size_t na, const double* b, std::size_t nb,
                             std::size_t dim);

}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace lrdm::kernels
