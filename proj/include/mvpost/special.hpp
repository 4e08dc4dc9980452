#pragma once

#include <functional>

namespace mvpost::num {

double std_normal_pdf(double x);

/// Standard Gaussian CDF. Absolute error well below 1e-12.
double std_normal_cdf(double x);

/// Inverse of std_normal_cdf on (0,1). Rational approximation polished with
/// one Halley step, so the round trip through the CDF holds to ~1e-15.
double std_normal_quantile(double u);

/// Regularized lower incomplete gamma P(a, x). Series for x < a+1,
/// continued fraction otherwise.
double regularized_gamma_p(double a, double x);

double gamma_pdf(double y, double shape, double scale);
double gamma_cdf(double y, double shape, double scale);

/// Inverse gamma CDF for u in [0,1); u = 0 maps to 0.
double gamma_quantile(double u, double shape, double scale);

/// Bisection on a nondecreasing f over [lo, hi]. Stops when |f(x) - target|
/// <= tol or the bracket width drops below tol. Throws std::domain_error if
/// target lies outside [f(lo), f(hi)].
double bisect_increasing(const std::function<double(double)>& f, double target, double lo,
                         double hi, double tol);

}  // namespace mvpost::num
