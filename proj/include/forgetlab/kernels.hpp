#pragma once

// Dense inner loops used by the autodiff layer.
//
// Two implementations share one contract: `reference` is a plain serial
// version kept as the test oracle, and the top-level functions are the
// cache-friendly versions that split output rows across OpenMP threads for
// large problems. Each output element is reduced in the same order no matter
// how many threads run, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace forgetlab::kernels {

/// Below this many multiply-adds the parallel kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

enum class Trans { N, T };

/// C[m x n] (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
/// A is stored m x k (N) or k x m (T); B is stored k x n (N) or n x k (T).
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

/// Row-wise softmax of a rows x cols matrix.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y);

/// Row-wise layer normalization. Writes the normalized rows to `xhat` and
/// 1/sqrt(var + eps) per row to `inv_std`; y = gamma * xhat + beta.
void layernorm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                    std::span<const double> gamma, std::span<const double> beta, std::span<double> y,
                    std::span<double> xhat, std::span<double> inv_std);

/// Number of threads the parallel kernels may use.
int max_threads();

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y);

void layernorm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                    std::span<const double> gamma, std::span<const double> beta, std::span<double> y,
                    std::span<double> xhat, std::span<double> inv_std);

} // namespace reference

} // namespace forgetlab::kernels
