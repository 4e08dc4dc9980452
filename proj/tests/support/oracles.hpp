#pragma once

// Independent reference implementations used by the tests. None of these may
// call into the library code paths they are checking.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mvpost/matrix.hpp"
#include "mvpost/rng.hpp"

namespace oracle {

// Standard normal CDF from a Taylor series around 0 with a continued-fraction
// tail, evaluated in long double.
double norm_cdf(double x);

// Regularized lower incomplete gamma P(a, x) by adaptive Simpson quadrature
// of the integrand.
double gamma_p_quadrature(double a, double x);

// Adaptive Simpson integral of f over [a, b].
double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-10);

// Nelder-Mead minimizer for small dimensions.
std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> start, double step = 0.5, int max_iter = 4000);

// Geometric median by coordinate grid search plus local refinement.
std::vector<double> geometric_median_grid(const mvpost::num::Matrix& points);

// Exact integral form of the ensemble CRPS: int (F_m(t) - 1{t >= y})^2 dt.
double crps_integral(std::span<const double> forecast, double obs);

// Kolmogorov-Smirnov distance between a sample and a cdf, handling ties and
// point masses through both one-sided comparisons at each jump.
double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf);

// 99th percentile of the reliability index under the uniform-multinomial
// null with `bins` bins and `cases` draws, by simulation.
double delta_null_q99(std::size_t bins, std::size_t cases, std::size_t sims,
                      mvpost::num::RngStream rng);

}  // namespace oracle
