#pragma once

#include <cstddef>
#include <functional>

#include "mvpost/copula.hpp"
#include "mvpost/matrix.hpp"
#include "mvpost/rng.hpp"

namespace mvpost::kernels {

// Copula sampling transform: row i draws p standard normals at counters
// i*p..i*p+p-1, correlates them through the Cholesky factor, and maps each
// coordinate through its marginal's pseudo-inverse. Rows are independent, so
// the parallel version partitions rows and reproduces the serial output
// bit for bit.
void copula_transform_serial(const num::Matrix& chol_lower,
                             const std::vector<copula::QuantileCache>& caches,
                             const num::RngStream& rng, std::size_t n, double* out);
void copula_transform_parallel(const num::Matrix& chol_lower,
                               const std::vector<copula::QuantileCache>& caches,
                               const num::RngStream& rng, std::size_t n, double* out, int jobs);
void copula_transform(const num::Matrix& chol_lower,
                      const std::vector<copula::QuantileCache>& caches, const num::RngStream& rng,
                      std::size_t n, double* out, int jobs);

// Index-parallel map over [0, n). fn(i) must only write state owned by
// index i; under that contract the parallel version matches the serial one.
void for_each_index_serial(std::size_t n, const std::function<void(std::size_t)>& fn);
void for_each_index_parallel(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);
void for_each_index(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace mvpost::kernels
