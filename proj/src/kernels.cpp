#include "forgetlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace forgetlab::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

bool go_parallel(std::size_t work) {
#ifdef _OPENMP
    return work >= kParallelThreshold && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

constexpr std::size_t kMr = 4;  // rows per register block
constexpr std::size_t kNr = 16; // columns per register block

// A element (r, p) lives at a[r * rs + p * ps], so A^T needs no copy.
struct AView {
    const double* a;
    std::size_t rs, ps;
    const double* at(std::size_t r, std::size_t p) const { return a + r * rs + p * ps; }
};

// Full kMr x kNr tile of C, accumulated over p ascending.
inline void tile_full(std::size_t n, std::size_t k, AView a, const double* b, double* c, bool accumulate) {
    double acc[kMr][kNr];
    for (std::size_t r = 0; r < kMr; ++r)
        for (std::size_t j = 0; j < kNr; ++j) acc[r][j] = accumulate ? c[r * n + j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t r = 0; r < kMr; ++r) {
            const double av = *a.at(r, p);
#pragma omp simd
            for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < kMr; ++r)
        for (std::size_t j = 0; j < kNr; ++j) c[r * n + j] = acc[r][j];
}

// Ragged edge tile: mr <= kMr rows, nr <= kNr columns.
inline void tile_edge(std::size_t mr, std::size_t nr, std::size_t n, std::size_t k, AView a, const double* b,
                      double* c, bool accumulate) {
    double acc[kMr][kNr];
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) acc[r][j] = accumulate ? c[r * n + j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t r = 0; r < mr; ++r) {
            const double av = *a.at(r, p);
            for (std::size_t j = 0; j < nr; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) c[r * n + j] = acc[r][j];
}

// C[m x n] (+)= op(A) * B[k x n], B row-major. Threads split row blocks;
// each element is reduced over k in ascending order regardless.
void gemm_xn(std::size_t m, std::size_t n, std::size_t k, AView a, const double* b, double* c, bool accumulate) {
    const auto blocks = static_cast<std::ptrdiff_t>((m + kMr - 1) / kMr);
#pragma omp parallel for schedule(static) if (go_parallel(m * n * k))
    for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
        const std::size_t i0 = static_cast<std::size_t>(bi) * kMr;
        const std::size_t mr = std::min(kMr, m - i0);
        const AView ai{a.a + i0 * a.rs, a.rs, a.ps};
        for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
            const std::size_t nr = std::min(kNr, n - j0);
            double* ct = c + i0 * n + j0;
            if (mr == kMr && nr == kNr)
                tile_full(n, k, ai, b + j0, ct, accumulate);
            else
                tile_edge(mr, nr, n, k, ai, b + j0, ct, accumulate);
        }
    }
}

} // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), 0.0);
        return;
    }
    const AView av = ta == Trans::N ? AView{a.data(), k, 1} : AView{a.data(), 1, m};
    if (tb == Trans::N) {
        gemm_xn(m, n, k, av, b.data(), c.data(), accumulate);
        return;
    }
    // B^T is materialized (B is n x k); the buffer is reused per thread.
    thread_local std::vector<double> bt;
    bt.resize(n * k);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_xn(m, n, k, av, bt.data(), c.data(), accumulate);
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (go_parallel(rows * cols * 16))
    for (std::ptrdiff_t rr = 0; rr < nrows; ++rr) {
        const auto r = static_cast<std::size_t>(rr);
        const double* xr = x.data() + r * cols;
        double* yr = y.data() + r * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void layernorm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                    std::span<const double> gamma, std::span<const double> beta, std::span<double> y,
                    std::span<double> xhat, std::span<double> inv_std) {
    const auto nrows = static_cast<std::ptrdiff_t>(rows);
    const double inv_n = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (go_parallel(rows * cols * 16))
    for (std::ptrdiff_t rr = 0; rr < nrows; ++rr) {
        const auto r = static_cast<std::size_t>(rr);
        const double* xr = x.data() + r * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
        mean *= inv_n;
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var *= inv_n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        double* hr = xhat.data() + r * cols;
        double* yr = y.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            hr[j] = (xr[j] - mean) * is;
            yr[j] = gamma[j] * hr[j] + beta[j];
        }
    }
}

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ta == Trans::N ? a[i * k + p] : a[p * m + i];
                const double bv = tb == Trans::N ? b[p * n + j] : b[j * k + p];
                s += av * bv;
            }
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = x[r * cols];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] - mx);
        for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / sum;
    }
}

void layernorm_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> x,
                    std::span<const double> gamma, std::span<const double> beta, std::span<double> y,
                    std::span<double> xhat, std::span<double> inv_std) {
    const double n = static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += x[r * cols + j];
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (x[r * cols + j] - mean) * (x[r * cols + j] - mean);
        var /= n;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat[r * cols + j] = (x[r * cols + j] - mean) * inv_std[r];
            y[r * cols + j] = gamma[j] * xhat[r * cols + j] + beta[j];
        }
    }
}

} // namespace reference

} // namespace forgetlab::kernels
