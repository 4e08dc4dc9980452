#include "mvpost/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mvpost/special.hpp"

namespace mvpost::kernels {

namespace {

// One sampled weather vector. eps/z are caller-provided scratch of size p.
inline void transform_row(const num::Matrix& chol, const std::vector<copula::QuantileCache>& caches,
                          const num::RngStream& rng, std::size_t row, double* out, double* eps,
                          double* z) {
    const std::size_t p = caches.size();
    for (std::size_t j = 0; j < p; ++j) eps[j] = rng.normal_at(row * p + j);
    for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k <= j; ++k) s += chol(j, k) * eps[k];
        z[j] = s;
    }
    const double u_hi = 1.0 - 1.1102230246251565e-16;  // largest double below 1
    for (std::size_t j = 0; j < p; ++j) {
        const double u = std::clamp(num::std_normal_cdf(z[j]), 1e-300, u_hi);
        out[row * p + j] = caches[j].quantile(u);
    }
}

}  // namespace

void copula_transform_serial(const num::Matrix& chol_lower,
                             const std::vector<copula::QuantileCache>& caches,
                             const num::RngStream& rng, std::size_t n, double* out) {
    const std::size_t p = caches.size();
    std::vector<double> eps(p), z(p);
    for (std::size_t i = 0; i < n; ++i)
        transform_row(chol_lower, caches, rng, i, out, eps.data(), z.data());
}

void copula_transform_parallel(const num::Matrix& chol_lower,
                               const std::vector<copula::QuantileCache>& caches,
                               const num::RngStream& rng, std::size_t n, double* out, int jobs) {
#ifdef _OPENMP
    const std::size_t p = caches.size();
#pragma omp parallel num_threads(std::max(jobs, 1))
    {
        std::vector<double> eps(p), z(p);
#pragma omp for schedule(static)
        for (std::int64_t i = 0; i < std::int64_t(n); ++i)
            transform_row(chol_lower, caches, rng, std::size_t(i), out, eps.data(), z.data());
    }
#else
    (void)jobs;
    copula_transform_serial(chol_lower, caches, rng, n, out);
#endif
}

void copula_transform(const num::Matrix& chol_lower,
                      const std::vector<copula::QuantileCache>& caches, const num::RngStream& rng,
                      std::size_t n, double* out, int jobs) {
    if (jobs <= 1)
        copula_transform_serial(chol_lower, caches, rng, n, out);
    else
        copula_transform_parallel(chol_lower, caches, rng, n, out, jobs);
}

void for_each_index_serial(std::size_t n, const std::function<void(std::size_t)>& fn) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
}

void for_each_index_parallel(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(jobs, 1))
    for (std::int64_t i = 0; i < std::int64_t(n); ++i) fn(std::size_t(i));
#else
    (void)jobs;
    for_each_index_serial(n, fn);
#endif
}

void for_each_index(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1)
        for_each_index_serial(n, fn);
    else
        for_each_index_parallel(n, jobs, fn);
}

}  // namespace mvpost::kernels
