#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

namespace {

long double norm_pdf_l(long double x) {
    const long double inv_sqrt_2pi = 0.39894228040143267794L;
    return inv_sqrt_2pi * std::exp(-0.5L * x * x);
}

// Lower-tail probability Q(|x|) via the continued fraction
// phi(x) / (x + 1/(x + 2/(x + 3/(...)))).
long double norm_tail_cf(long double x) {
    long double cf = 0.0L;
    for (int k = 60; k >= 1; --k) cf = (long double)(k) / (x + cf);
    return norm_pdf_l(x) / (x + cf);
}

}  // namespace

double norm_cdf(double x) {
    const long double ax = std::abs((long double)x);
    long double result;
    if (ax < 7.0L) {
        // Phi(x) = 1/2 + phi(x) * sum x^(2n+1) / (1*3*5*...*(2n+1))
        long double term = ax;
        long double sum = ax;
        for (int n = 1; n < 500; ++n) {
            term *= ax * ax / (long double)(2 * n + 1);
            sum += term;
            if (term < 1e-24L * sum) break;
        }
        result = 0.5L + norm_pdf_l(ax) * sum;
    } else {
        result = 1.0L - norm_tail_cf(ax);
    }
    if (x < 0) result = 1.0L - result;
    return (double)result;
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    struct Simpson {
        const std::function<double(double)>& f;
        double eval(double a, double fa, double b, double fb, double m, double fm, double whole,
                    double tol, int depth) const {
            const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
            const double flm = f(lm), frm = f(rm);
            const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
                return left + right + (left + right - whole) / 15.0;
            return eval(a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
                   eval(m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
        }
    };
    // Fixed pre-split so narrow interior peaks cannot hide from the initial
    // Simpson nodes.
    const int panels = 32;
    double total = 0.0;
    for (int i = 0; i < panels; ++i) {
        const double pa = a + (b - a) * double(i) / panels;
        const double pb = a + (b - a) * double(i + 1) / panels;
        const double m = 0.5 * (pa + pb);
        const double fa = f(pa), fb = f(pb), fm = f(m);
        const double whole = (pb - pa) / 6.0 * (fa + 4.0 * fm + fb);
        total += Simpson{f}.eval(pa, fa, pb, fb, m, fm, whole, tol / panels, 48);
    }
    return total;
}

double gamma_p_quadrature(double a, double x) {
    if (x <= 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (a < 1.0) {
        // Substituting u = t^a removes the endpoint singularity:
        // int_0^x t^(a-1) e^(-t) dt = (1/a) int_0^(x^a) exp(-u^(1/a)) du.
        auto g = [&](double u) { return u <= 0.0 ? 1.0 : std::exp(-std::pow(u, 1.0 / a)); };
        const double upper = std::pow(x, a);
        return std::exp(-lg) / a * integrate(g, 0.0, upper, 1e-13);
    }
    auto integrand = [&](double t) {
        if (t <= 0.0) return 0.0;
        return std::exp((a - 1.0) * std::log(t) - t - lg);
    };
    // Split at the mode to keep the adaptive rule honest.
    const double split = std::min(x, std::max(a - 1.0, 1e-8));
    double result = integrate(integrand, 0.0, split, 1e-13);
    if (x > split) result += integrate(integrand, split, x, 1e-13);
    return result;
}

std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> start, double step, int max_iter) {
    const std::size_t n = start.size();
    std::vector<std::vector<double>> simplex(n + 1, start);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
    std::vector<double> value(n + 1);
    for (std::size_t i = 0; i <= n; ++i) value[i] = f(simplex[i]);

    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<std::size_t> order(n + 1);
        for (std::size_t i = 0; i <= n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
        const std::size_t best = order[0], worst = order[n], second = order[n - 1];
        if (std::abs(value[worst] - value[best]) <=
            1e-12 * (1.0 + std::abs(value[best])))
            break;

        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == worst) continue;
            for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j];
        }
        for (double& c : centroid) c /= double(n);

        auto blend = [&](double t) {
            std::vector<double> out(n);
            for (std::size_t j = 0; j < n; ++j)
                out[j] = centroid[j] + t * (simplex[worst][j] - centroid[j]);
            return out;
        };
        const std::vector<double> reflect = blend(-1.0);
        const double fr = f(reflect);
        if (fr < value[order[0]]) {
            const std::vector<double> expand = blend(-2.0);
            const double fe = f(expand);
            if (fe < fr) {
                simplex[worst] = expand;
                value[worst] = fe;
            } else {
                simplex[worst] = reflect;
                value[worst] = fr;
            }
        } else if (fr < value[second]) {
            simplex[worst] = reflect;
            value[worst] = fr;
        } else {
            const std::vector<double> contract = blend(fr < value[worst] ? -0.5 : 0.5);
            const double fc = f(contract);
            if (fc < std::min(fr, value[worst])) {
                simplex[worst] = contract;
                value[worst] = fc;
            } else {
                for (std::size_t i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        simplex[i][j] = simplex[best][j] + 0.5 * (simplex[i][j] - simplex[best][j]);
                    value[i] = f(simplex[i]);
                }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i <= n; ++i)
        if (value[i] < value[best]) best = i;
    return simplex[best];
}

std::vector<double> geometric_median_grid(const mvpost::num::Matrix& points) {
    const std::size_t n = points.rows(), p = points.cols();
    if (n == 0) throw std::invalid_argument("geometric_median_grid: empty");
    auto objective = [&](const std::vector<double>& at) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < p; ++j)
                d += (points(i, j) - at[j]) * (points(i, j) - at[j]);
            s += std::sqrt(d);
        }
        return s;
    };

    std::vector<double> lo(p, 1e300), hi(p, -1e300);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            lo[j] = std::min(lo[j], points(i, j));
            hi[j] = std::max(hi[j], points(i, j));
        }

    std::vector<double> best(p);
    double best_val = 1e300;
    const int grid = p <= 2 ? 41 : 17;
    std::vector<int> idx(p, 0);
    std::vector<double> cand(p);
    while (true) {
        for (std::size_t j = 0; j < p; ++j)
            cand[j] = lo[j] + (hi[j] - lo[j]) * double(idx[j]) / double(grid - 1);
        const double v = objective(cand);
        if (v < best_val) {
            best_val = v;
            best = cand;
        }
        std::size_t j = 0;
        while (j < p && ++idx[j] == grid) idx[j++] = 0;
        if (j == p) break;
    }

    // Local coordinate-descent refinement around the grid winner.
    double h = 0.0;
    for (std::size_t j = 0; j < p; ++j) h = std::max(h, (hi[j] - lo[j]) / double(grid - 1));
    for (int round = 0; round < 200 && h > 1e-10; ++round) {
        bool improved = false;
        for (std::size_t j = 0; j < p; ++j) {
            for (double dir : {-1.0, 1.0}) {
                cand = best;
                cand[j] += dir * h;
                const double v = objective(cand);
                if (v < best_val) {
                    best_val = v;
                    best = cand;
                    improved = true;
                }
            }
        }
        if (!improved) h *= 0.5;
    }
    return best;
}

double crps_integral(std::span<const double> forecast, double obs) {
    std::vector<double> brk(forecast.begin(), forecast.end());
    brk.push_back(obs);
    std::sort(brk.begin(), brk.end());
    const double m = double(forecast.size());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < brk.size(); ++i) {
        const double a = brk[i], b = brk[i + 1];
        if (a == b) continue;
        double ecdf = 0.0;
        for (double x : forecast)
            if (x <= a) ecdf += 1.0;
        ecdf /= m;
        const double heavy = obs <= a ? 1.0 : 0.0;
        total += (ecdf - heavy) * (ecdf - heavy) * (b - a);
    }
    return total;
}

double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = double(sample.size());
    double d = 0.0;
    std::size_t i = 0;
    while (i < sample.size()) {
        std::size_t j = i;
        while (j < sample.size() && sample[j] == sample[i]) ++j;
        const double f = cdf(sample[i]);
        const double before = double(i) / n;   // empirical cdf just below the value
        const double after = double(j) / n;    // empirical cdf at the value
        d = std::max(d, std::max(std::abs(f - before), std::abs(f - after)));
        i = j;
    }
    return d;
}

double delta_null_q99(std::size_t bins, std::size_t cases, std::size_t sims,
                      mvpost::num::RngStream rng) {
    std::vector<double> deltas(sims);
    std::vector<std::uint64_t> counts(bins);
    for (std::size_t s = 0; s < sims; ++s) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t c = 0; c < cases; ++c) ++counts[rng.uniform_int(bins)];
        double delta = 0.0;
        for (std::uint64_t c : counts)
            delta += std::abs(double(c) / double(cases) - 1.0 / double(bins));
        deltas[s] = delta;
    }
    std::sort(deltas.begin(), deltas.end());
    return deltas[std::size_t(0.99 * double(sims - 1))];
}

}  // namespace oracle
