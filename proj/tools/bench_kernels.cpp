// Times the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mtn/kernels.hpp"

namespace {

double now() {
#ifdef _OPENMP
    return omp_get_wtime();
#else
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
#endif
}

std::vector<float> random_vec(size_t n, std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

template <typename F>
double best_of(int reps, F fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now();
        fn();
        best = std::min(best, now() - t0);
    }
    return best;
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (compiled without OpenMP)\n");
#endif
    std::printf("%-28s %12s %12s %9s\n", "kernel", "serial (ms)", "parallel(ms)", "speedup");

    std::mt19937 rng(1);
    for (int64_t n : {128, 256, 512}) {
        const auto a = random_vec(static_cast<size_t>(n * n), rng);
        const auto b = random_vec(static_cast<size_t>(n * n), rng);
        std::vector<float> c(static_cast<size_t>(n * n));
        const double serial = best_of(3, [&]() {
            std::fill(c.begin(), c.end(), 0.0f);
            mtn::kernels::gemm_serial(false, false, n, n, n, a.data(), b.data(), c.data());
        });
        mtn::kernels::set_parallel_enabled(true);
        const double parallel = best_of(3, [&]() {
            std::fill(c.begin(), c.end(), 0.0f);
            mtn::kernels::gemm(false, false, n, n, n, a.data(), b.data(), c.data());
        });
        std::printf("gemm %4ldx%-4ld             %12.3f %12.3f %8.2fx\n",
                    static_cast<long>(n), static_cast<long>(n), serial * 1e3, parallel * 1e3,
                    serial / parallel);
    }

    {
        const int64_t rows = 8192, width = 512;
        const auto x = random_vec(static_cast<size_t>(rows * width), rng);
        std::vector<float> y(x.size());
        const double serial = best_of(
            3, [&]() { mtn::kernels::softmax_rows_serial(rows, width, x.data(), y.data()); });
        const double parallel =
            best_of(3, [&]() { mtn::kernels::softmax_rows(rows, width, x.data(), y.data()); });
        std::printf("softmax rows 8192x512        %12.3f %12.3f %8.2fx\n", serial * 1e3,
                    parallel * 1e3, serial / parallel);

        const auto gain = random_vec(static_cast<size_t>(width), rng);
        const auto bias = random_vec(static_cast<size_t>(width), rng);
        std::vector<float> mean(rows), rstd(rows);
        const double ln_serial = best_of(3, [&]() {
            mtn::kernels::layer_norm_rows_serial(rows, width, x.data(), gain.data(), bias.data(),
                                                 1e-6f, y.data(), mean.data(), rstd.data());
        });
        const double ln_parallel = best_of(3, [&]() {
            mtn::kernels::layer_norm_rows(rows, width, x.data(), gain.data(), bias.data(), 1e-6f,
                                          y.data(), mean.data(), rstd.data());
        });
        std::printf("layer_norm rows 8192x512     %12.3f %12.3f %8.2fx\n", ln_serial * 1e3,
                    ln_parallel * 1e3, ln_serial / ln_parallel);
    }
    return 0;
}
