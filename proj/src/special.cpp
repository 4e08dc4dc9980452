#include "mvpost/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mvpost::num {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// Acklam's rational approximation to the standard normal quantile,
// accurate to ~1.15e-9 before polishing.
double norm_quantile_approx(double u) {
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    if (u < plow) {
        const double q = std::sqrt(-2.0 * std::log(u));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (u > 1.0 - plow) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - u));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = u - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Series expansion of P(a, x), valid for x < a+1.
double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < 1000; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Modified Lentz continued fraction for Q(a, x), valid for x >= a+1.
double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 1000; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_cdf(double x) {
    if (!std::isfinite(x)) throw std::domain_error("std_normal_cdf: non-finite input");
    return 0.5 * std::erfc(-x / kSqrt2);
}

double std_normal_quantile(double u) {
    if (!(u > 0.0 && u < 1.0))
        throw std::domain_error("std_normal_quantile: u must lie in (0,1)");
    double x = norm_quantile_approx(u);
    // One Halley step against the high-accuracy CDF.
    const double e = std_normal_cdf(x) - u;
    const double d = std_normal_pdf(x);
    if (d > 0.0) x -= e / d / (1.0 + x * e / (2.0 * d));
    return x;
}

double regularized_gamma_p(double a, double x) {
    if (!(a > 0.0)) throw std::domain_error("regularized_gamma_p: shape must be positive");
    if (!std::isfinite(x)) throw std::domain_error("regularized_gamma_p: non-finite x");
    if (x <= 0.0) return 0.0;
    if (x < a + 1.0) return gamma_p_series(a, x);
    return 1.0 - gamma_q_contfrac(a, x);
}

double gamma_pdf(double y, double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
        throw std::domain_error("gamma_pdf: shape and scale must be positive");
    if (y < 0.0) return 0.0;
    if (y == 0.0) {
        if (shape > 1.0) return 0.0;
        if (shape == 1.0) return 1.0 / scale;
        return std::numeric_limits<double>::infinity();
    }
    return std::exp((shape - 1.0) * std::log(y) - y / scale - std::lgamma(shape) -
                    shape * std::log(scale));
}

double gamma_cdf(double y, double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
        throw std::domain_error("gamma_cdf: shape and scale must be positive");
    if (!std::isfinite(y)) {
        if (y > 0.0) return 1.0;
        throw std::domain_error("gamma_cdf: non-finite y");
    }
    if (y <= 0.0) return 0.0;
    return regularized_gamma_p(shape, y / scale);
}

double gamma_quantile(double u, double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
        throw std::domain_error("gamma_quantile: shape and scale must be positive");
    if (!(u >= 0.0 && u < 1.0)) throw std::domain_error("gamma_quantile: u must lie in [0,1)");
    if (u == 0.0) return 0.0;

    // Wilson-Hilferty start, then safeguarded Newton in scale=1 units.
    const double z = std_normal_quantile(u);
    const double g = 1.0 - 2.0 / (9.0 * shape) + z * std::sqrt(2.0 / (9.0 * shape));
    double x = shape * g * g * g;
    if (!(x > 0.0) || !std::isfinite(x)) x = shape;

    double lo = 0.0;
    double hi = shape + 10.0 * std::sqrt(shape) + 10.0;
    while (regularized_gamma_p(shape, hi) < u) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) break;
    }
    if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);

    for (int it = 0; it < 300; ++it) {
        const double f = regularized_gamma_p(shape, x) - u;
        if (f > 0.0)
            hi = x;
        else
            lo = x;
        if (std::abs(f) < 1e-13 || hi - lo <= 1e-15 * hi) break;
        const double dens = std::exp((shape - 1.0) * std::log(x) - x - std::lgamma(shape));
        double next = std::isfinite(dens) && dens > 0.0 ? x - f / dens
                                                        : std::numeric_limits<double>::quiet_NaN();
        // Stalled or out-of-bracket Newton falls back to geometric bisection,
        // which still reaches the tiny roots of small-shape quantiles.
        if (!(next > lo && next < hi) || next == x)
            next = lo > 0.0 ? std::sqrt(lo * hi) : hi * 1e-2;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        x = next;
    }
    return x * scale;
}

double bisect_increasing(const std::function<double(double)>& f, double target, double lo,
                         double hi, double tol) {
    if (!(lo <= hi)) throw std::domain_error("bisect_increasing: empty bracket");
    double flo = f(lo);
    double fhi = f(hi);
    if (target < flo || target > fhi)
        throw std::domain_error("bisect_increasing: target " + std::to_string(target) +
                                " outside bracket [" + std::to_string(flo) + ", " +
                                std::to_string(fhi) + "]");
    if (flo == target) return lo;
    if (fhi == target) return hi;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (std::abs(fm - target) <= tol || hi - lo <= tol) return mid;
        if (fm < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace mvpost::num
