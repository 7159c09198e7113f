#pragma once

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

// Dense inner loops shared by the tensor ops. Every kernel has a serial
// reference implementation; the OpenMP variants parallelize over independent
// output rows only, so parallel and serial results are bit-identical for any
// thread count.

namespace mtn::kernels {

// Runtime switch, mainly for tests and the kernel benchmark.
bool parallel_enabled();
void set_parallel_enabled(bool on);

// Work threshold below which the parallel kernels stay serial.
inline constexpr int64_t kParallelGrain = 1 << 15;

namespace detail {

template <typename T>
inline void gemm_row(bool trans_a, bool trans_b, int64_t i, int64_t n, int64_t k,
                     const T* a, const T* b, T* c, int64_t lda, int64_t ldb) {
    T* crow = c + i * n;
    if (!trans_b) {
        // c[i,:] += a[i,l] * b[l,:]
        for (int64_t l = 0; l < k; ++l) {
            const T av = trans_a ? a[l * lda + i] : a[i * lda + l];
            if (av == T(0)) continue;
            const T* brow = b + l * ldb;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else {
        // c[i,j] += dot(a[i,:], b[j,:])
        for (int64_t j = 0; j < n; ++j) {
            T acc = 0;
            const T* brow = b + j * ldb;
            if (trans_a) {
                for (int64_t l = 0; l < k; ++l) acc += a[l * lda + i] * brow[l];
            } else {
                const T* arow = a + i * lda;
                for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            }
            crow[j] = crow[j] + acc;
        }
    }
}

}  // namespace detail

// c[m x n] += op(a) * op(b), row-major. op(a) is a (m x k) as stored when
// trans_a is false, otherwise a is stored (k x m) and read transposed;
// likewise b is (k x n) or (n x k). c must be zeroed by the caller unless
// accumulation is intended.
template <typename T>
void gemm_serial(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                 const T* a, const T* b, T* c) {
    const int64_t lda = trans_a ? m : k;
    const int64_t ldb = trans_b ? k : n;
    for (int64_t i = 0; i < m; ++i)
        detail::gemm_row(trans_a, trans_b, i, n, k, a, b, c, lda, ldb);
}

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const T* a, const T* b, T* c) {
    const int64_t lda = trans_a ? m : k;
    const int64_t ldb = trans_b ? k : n;
    const bool par = parallel_enabled() && m * n * k >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i)
        detail::gemm_row(trans_a, trans_b, i, n, k, a, b, c, lda, ldb);
}

// Row-wise softmax with max subtraction. y may alias x.
template <typename T>
void softmax_rows_serial(int64_t rows, int64_t width, const T* x, T* y) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * width;
        T* yr = y + r * width;
        T mx = xr[0];
        for (int64_t j = 1; j < width; ++j) mx = std::max(mx, xr[j]);
        T sum = 0;
        for (int64_t j = 0; j < width; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int64_t j = 0; j < width; ++j) yr[j] *= inv;
    }
}

template <typename T>
void softmax_rows(int64_t rows, int64_t width, const T* x, T* y) {
    const bool par = parallel_enabled() && rows * width >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < rows; ++r)
        softmax_rows_serial(1, width, x + r * width, y + r * width);
}

// Row-wise layer normalization over the last axis, then affine transform.
// Saves the per-row mean and reciprocal stddev for the backward pass.
template <typename T>
void layer_norm_rows_serial(int64_t rows, int64_t width, const T* x, const T* gain,
                            const T* bias, T eps, T* y, T* save_mean, T* save_rstd) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * width;
        T* yr = y + r * width;
        T mean = 0;
        for (int64_t j = 0; j < width; ++j) mean += xr[j];
        mean /= T(width);
        T var = 0;
        for (int64_t j = 0; j < width; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
        }
        var /= T(width);
        const T rstd = T(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < width; ++j)
            yr[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
        if (save_mean) save_mean[r] = mean;
        if (save_rstd) save_rstd[r] = rstd;
    }
}

template <typename T>
void layer_norm_rows(int64_t rows, int64_t width, const T* x, const T* gain,
                     const T* bias, T eps, T* y, T* save_mean, T* save_rstd) {
    const bool par = parallel_enabled() && rows * width >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < rows; ++r)
        layer_norm_rows_serial(1, width, x + r * width, gain, bias, eps, y + r * width,
                               save_mean ? save_mean + r : nullptr,
                               save_rstd ? save_rstd + r : nullptr);
}

}  // namespace mtn::kernels
