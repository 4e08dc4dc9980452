#include "mvpost/bma.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "mvpost/rng.hpp"
#include "mvpost/special.hpp"

namespace mvpost::bma {

namespace {

constexpr double kLinkFloor = 1e-4;   // evaluated mean/variance links
constexpr double kSigma2Floor = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t member_count_of(const TrainingSet& t) {
    if (t.empty()) throw std::invalid_argument("training set is empty");
    const std::size_t k = t.front().members.size();
    if (k == 0) throw std::invalid_argument("training pairs have no ensemble members");
    for (const auto& pair : t)
        if (pair.members.size() != k)
            throw std::invalid_argument("member count varies across training pairs");
    return k;
}

double log_normal_pdf(double y, double mu, double sigma2) {
    const double d = y - mu;
    return -0.5 * std::log(2.0 * M_PI * sigma2) - d * d / (2.0 * sigma2);
}

double log_gamma_pdf(double y, double shape, double scale) {
    if (y <= 0.0) return -kInf;
    return (shape - 1.0) * std::log(y) - y / scale - std::lgamma(shape) -
           shape * std::log(scale);
}

// shape/scale from the (mean, variance) moment mapping of a gamma kernel.
inline void gamma_from_moments(double mean, double var, double& shape, double& scale) {
    shape = mean * mean / var;
    scale = var / mean;
}

// Responsibilities and log-likelihood for one case given per-member log
// densities; log-sum-exp keeps floored-variance kernels from underflowing.
double lse_responsibilities(const std::vector<double>& logdens, std::vector<double>& resp) {
    const std::size_t k = logdens.size();
    double m = -kInf;
    for (double l : logdens) m = std::max(m, l);
    if (m == -kInf) {
        std::fill(resp.begin(), resp.end(), 1.0 / double(k));
        return -kInf;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        resp[i] = std::exp(logdens[i] - m);
        s += resp[i];
    }
    for (std::size_t i = 0; i < k; ++i) resp[i] /= s;
    return m + std::log(s);
}

void normalize_weights(std::vector<double>& w) {
    double s = std::accumulate(w.begin(), w.end(), 0.0);
    if (s <= 0.0) {
        std::fill(w.begin(), w.end(), 1.0 / double(w.size()));
        return;
    }
    for (double& v : w) v /= s;
}

// Evaluates candidates on [center-h, center+h] (clamped to bounds) and moves
// to the best improvement, adapting h for the next call. Never degrades the
// objective, which keeps EM iterations monotone.
void improve_coordinate(double& value, double& halfwidth, double lo_bound, double hi_bound,
                        double& best_obj, const std::function<double(double)>& objective) {
    const int coarse = 9;
    const double lo = std::max(lo_bound, value - halfwidth);
    const double hi = std::min(hi_bound, value + halfwidth);
    if (!(hi > lo)) return;
    double best_x = value;
    for (int i = 0; i < coarse; ++i) {
        const double x = lo + (hi - lo) * double(i) / double(coarse - 1);
        const double q = objective(x);
        if (q > best_obj) {
            best_obj = q;
            best_x = x;
        }
    }
    const double step = (hi - lo) / double(coarse - 1);
    for (int i = -2; i <= 2; ++i) {
        if (i == 0) continue;
        const double x = std::clamp(best_x + step * double(i) / 2.5, lo_bound, hi_bound);
        const double q = objective(x);
        if (q > best_obj) {
            best_obj = q;
            best_x = x;
        }
    }
    const bool at_edge = best_x <= lo + 0.5 * step || best_x >= hi - 0.5 * step;
    halfwidth = at_edge ? halfwidth * 2.0 : std::max(halfwidth * 0.6, 1e-7);
    value = best_x;
}

bool plateaued(const std::vector<double>& llpath) {
    if (llpath.size() < 2) return true;
    const double first = llpath.front(), last = llpath.back();
    return last <= first + 1e-9 * (1.0 + std::abs(first));
}

}  // namespace

std::string_view kind_name(Kind k) {
    switch (k) {
        case Kind::gaussian: return "gaussian";
        case Kind::gamma: return "gamma";
        case Kind::precip: return "precip";
    }
    throw std::logic_error("kind_name: bad kind");
}

Kind kind_from_name(std::string_view name) {
    if (name == "gaussian") return Kind::gaussian;
    if (name == "gamma") return Kind::gamma;
    if (name == "precip") return Kind::precip;
    throw std::invalid_argument("unknown marginal kind: " + std::string(name));
}

std::array<double, 2> simple_least_squares(const std::vector<double>& x,
                                           const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty())
        throw std::invalid_argument("simple_least_squares: size mismatch");
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 1e-12 * n) return {my, 0.0};
    const double slope = sxy / sxx;
    return {my - slope * mx, slope};
}

// ---------------------------------------------------------------------------
// Gaussian family

namespace {

struct GaussianRun {
    std::vector<double> weights;
    double sigma2 = 1.0;
    std::vector<double> llpath;
    std::vector<std::vector<double>> trace;
};

GaussianRun em_gaussian(const std::vector<double>& y, const std::vector<double>& mu,
                        std::size_t big_t, std::size_t k, std::vector<double> w0,
                        double sigma2_0, const FitOptions& opt) {
    GaussianRun run;
    run.weights = std::move(w0);
    run.sigma2 = std::max(sigma2_0, kSigma2Floor);
    std::vector<double> resp(big_t * k);
    std::vector<double> logdens(k), rk(k);

    for (int iter = 0; iter < opt.max_iter; ++iter) {
        std::vector<double> logw(k);
        for (std::size_t j = 0; j < k; ++j) logw[j] = std::log(run.weights[j]);
        double ll = 0.0;
        for (std::size_t t = 0; t < big_t; ++t) {
            for (std::size_t j = 0; j < k; ++j)
                logdens[j] = logw[j] + log_normal_pdf(y[t], mu[t * k + j], run.sigma2);
            ll += lse_responsibilities(logdens, rk);
            for (std::size_t j = 0; j < k; ++j) resp[t * k + j] = rk[j];
        }
        run.llpath.push_back(ll);
        if (opt.track_weights) run.trace.push_back(run.weights);
        if (iter > 0) {
            const double prev = run.llpath[run.llpath.size() - 2];
            if (std::abs(ll - prev) <= opt.rel_tol * (1.0 + std::abs(ll))) break;
        }
        // M-step: closed-form weights and pooled variance.
        std::fill(run.weights.begin(), run.weights.end(), 0.0);
        double ss = 0.0;
        for (std::size_t t = 0; t < big_t; ++t)
            for (std::size_t j = 0; j < k; ++j) {
                const double r = resp[t * k + j];
                run.weights[j] += r;
                const double d = y[t] - mu[t * k + j];
                ss += r * d * d;
            }
        for (double& w : run.weights) w /= double(big_t);
        normalize_weights(run.weights);
        run.sigma2 = std::max(ss / double(big_t), kSigma2Floor);
    }
    return run;
}

}  // namespace

GaussianBmaModel fit_gaussian_bma(const TrainingSet& t, const FitOptions& opt) {
    const std::size_t k = member_count_of(t);
    const std::size_t big_t = t.size();
    if (big_t < 2 * k + 2)
        throw FitError("fit_gaussian_bma: need at least " + std::to_string(2 * k + 2) +
                       " training pairs, got " + std::to_string(big_t));

    std::vector<double> y(big_t);
    for (std::size_t i = 0; i < big_t; ++i) y[i] = t[i].obs;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(big_t);
    double vy = 0.0;
    for (double v : y) vy += (v - my) * (v - my);
    if (vy == 0.0)
        throw FitError("fit_gaussian_bma: observations are constant; widen the training window");

    GaussianBmaModel model;
    model.bias.resize(k);
    std::vector<double> xk(big_t);
    std::vector<double> mu(big_t * k);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < big_t; ++i) xk[i] = t[i].members[j];
        model.bias[j] = simple_least_squares(xk, y);
        for (std::size_t i = 0; i < big_t; ++i)
            mu[i * k + j] = model.bias[j][0] + model.bias[j][1] * t[i].members[j];
    }

    double s0 = 0.0;
    for (std::size_t i = 0; i < big_t; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double d = y[i] - mu[i * k + j];
            s0 += d * d;
        }
    s0 = std::max(s0 / double(big_t * k), kSigma2Floor);

    GaussianRun best = em_gaussian(y, mu, big_t, k, std::vector<double>(k, 1.0 / double(k)), s0, opt);
    if (plateaued(best.llpath) && opt.restarts > 0) {
        num::RngStream jitter(0x9E1757u, num::RngStream::derive_stream("gaussian-restart", big_t, k));
        for (int r = 0; r < opt.restarts; ++r) {
            std::vector<double> w(k);
            for (double& v : w) v = 0.25 + jitter.uniform();
            normalize_weights(w);
            const double s = s0 * std::exp(1.4 * (jitter.uniform() - 0.5));
            GaussianRun cand = em_gaussian(y, mu, big_t, k, std::move(w), s, opt);
            if (cand.llpath.back() > best.llpath.back()) best = std::move(cand);
        }
    }

    model.weights = std::move(best.weights);
    model.sigma2 = best.sigma2;
    model.loglik_path = std::move(best.llpath);
    model.weight_trace = std::move(best.trace);
    return model;
}

// ---------------------------------------------------------------------------
// Gamma family (wind speed)

namespace {

struct GammaRun {
    std::vector<double> weights;
    std::array<double, 2> var_coef;
    std::vector<double> llpath;
    std::vector<std::vector<double>> trace;
};

// EM over positive observations with numerically maximized variance links.
GammaRun em_gamma(const std::vector<double>& y, const std::vector<double>& mu,
                  const std::vector<double>& xvar, std::size_t big_t, std::size_t k,
                  std::vector<double> w0, std::array<double, 2> c0, double c0_max,
                  double h0_init, double h1_init, const FitOptions& opt) {
    GammaRun run;
    run.weights = std::move(w0);
    run.var_coef = c0;
    std::vector<double> resp(big_t * k);
    std::vector<double> logdens(k), rk(k);

    auto log_kernel = [&](std::size_t t, std::size_t j, const std::array<double, 2>& c) {
        const double v = std::max(c[0] + c[1] * xvar[t * k + j], kLinkFloor);
        double shape, scale;
        gamma_from_moments(mu[t * k + j], v, shape, scale);
        return log_gamma_pdf(y[t], shape, scale);
    };
    auto q_of = [&](const std::array<double, 2>& c) {
        double q = 0.0;
        for (std::size_t t = 0; t < big_t; ++t)
            for (std::size_t j = 0; j < k; ++j) q += resp[t * k + j] * log_kernel(t, j, c);
        return q;
    };

    double h0 = h0_init, h1 = h1_init;
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        std::vector<double> logw(k);
        for (std::size_t j = 0; j < k; ++j) logw[j] = std::log(run.weights[j]);
        double ll = 0.0;
        for (std::size_t t = 0; t < big_t; ++t) {
            for (std::size_t j = 0; j < k; ++j)
                logdens[j] = logw[j] + log_kernel(t, j, run.var_coef);
            ll += lse_responsibilities(logdens, rk);
            for (std::size_t j = 0; j < k; ++j) resp[t * k + j] = rk[j];
        }
        run.llpath.push_back(ll);
        if (opt.track_weights) run.trace.push_back(run.weights);
        if (iter > 0) {
            const double prev = run.llpath[run.llpath.size() - 2];
            if (std::abs(ll - prev) <= opt.rel_tol * (1.0 + std::abs(ll))) break;
        }
        std::fill(run.weights.begin(), run.weights.end(), 0.0);
        for (std::size_t t = 0; t < big_t; ++t)
            for (std::size_t j = 0; j < k; ++j) run.weights[j] += resp[t * k + j];
        for (double& w : run.weights) w /= double(big_t);
        normalize_weights(run.weights);

        std::array<double, 2> c = run.var_coef;
        double q = q_of(c);
        improve_coordinate(c[0], h0, 1e-6, c0_max, q,
                           [&](double v) { return q_of({v, c[1]}); });
        improve_coordinate(c[1], h1, -c0_max, c0_max, q,
                           [&](double v) { return q_of({c[0], v}); });
        run.var_coef = c;
    }
    return run;
}

}  // namespace

GammaBmaModel fit_gamma_bma(const TrainingSet& t, const FitOptions& opt) {
    const std::size_t k = member_count_of(t);
    for (const auto& pair : t)
        if (pair.obs < 0.0)
            throw std::invalid_argument("fit_gamma_bma: negative observation in training set");

    // The gamma likelihood is degenerate at y == 0, so the fit uses the
    // positive-observation pairs.
    std::vector<std::size_t> wet;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i].obs > 0.0) wet.push_back(i);
    if (wet.empty()) throw FitError("fit_gamma_bma: all observations are zero");
    if (wet.size() < 2 * k + 2)
        throw FitError("fit_gamma_bma: need at least " + std::to_string(2 * k + 2) +
                       " positive-observation pairs, got " + std::to_string(wet.size()));

    const std::size_t big_t = wet.size();
    std::vector<double> y(big_t);
    for (std::size_t i = 0; i < big_t; ++i) y[i] = t[wet[i]].obs;

    GammaBmaModel model;
    model.mean_coef.resize(k);
    std::vector<double> xk(big_t);
    std::vector<double> mu(big_t * k), xvar(big_t * k);
    double mean_abs_x = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < big_t; ++i) xk[i] = t[wet[i]].members[j];
        model.mean_coef[j] = simple_least_squares(xk, y);
        for (std::size_t i = 0; i < big_t; ++i) {
            const double x = t[wet[i]].members[j];
            mu[i * k + j] = std::max(model.mean_coef[j][0] + model.mean_coef[j][1] * x, kLinkFloor);
            xvar[i * k + j] = x;
            mean_abs_x += std::abs(x);
        }
    }
    mean_abs_x /= double(big_t * k);

    double v0 = 0.0;
    for (std::size_t i = 0; i < big_t; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double d = y[i] - mu[i * k + j];
            v0 += d * d;
        }
    v0 = std::max(v0 / double(big_t * k), kLinkFloor);
    const double c0_max = 100.0 * v0 + 10.0;
    const double h0 = std::max(0.5 * v0, 1e-3);
    const double h1 = std::max(0.5 * v0 / (mean_abs_x + 1.0), 1e-3);

    GammaRun best = em_gamma(y, mu, xvar, big_t, k, std::vector<double>(k, 1.0 / double(k)),
                             {v0, 0.0}, c0_max, h0, h1, opt);
    if (plateaued(best.llpath) && opt.restarts > 0) {
        num::RngStream jitter(0x9E1757u, num::RngStream::derive_stream("gamma-restart", big_t, k));
        for (int r = 0; r < opt.restarts; ++r) {
            std::vector<double> w(k);
            for (double& v : w) v = 0.25 + jitter.uniform();
            normalize_weights(w);
            const double c0j = v0 * std::exp(1.4 * (jitter.uniform() - 0.5));
            GammaRun cand = em_gamma(y, mu, xvar, big_t, k, std::move(w), {c0j, 0.0}, c0_max,
                                     h0, h1, opt);
            if (cand.llpath.back() > best.llpath.back()) best = std::move(cand);
        }
    }

    model.weights = std::move(best.weights);
    model.var_coef = best.var_coef;
    model.loglik_path = std::move(best.llpath);
    model.weight_trace = std::move(best.trace);
    return model;
}

// ---------------------------------------------------------------------------
// Precipitation family

namespace {

// Ridge-stabilized IRLS for a 3-column logistic regression. Degenerate
// columns (e.g. the delta indicator never firing) leave their coefficient
// near zero instead of failing.
std::array<double, 3> logistic_irls(const std::vector<std::array<double, 3>>& x,
                                    const std::vector<double>& d) {
    std::array<double, 3> beta{0.0, 0.0, 0.0};
    const double ridge = 1e-8;
    for (int iter = 0; iter < 50; ++iter) {
        double a[3][3] = {};
        double g[3] = {};
        for (std::size_t i = 0; i < x.size(); ++i) {
            double eta = 0.0;
            for (int c = 0; c < 3; ++c) eta += beta[c] * x[i][c];
            eta = std::clamp(eta, -30.0, 30.0);
            const double p = 1.0 / (1.0 + std::exp(-eta));
            const double w = std::max(p * (1.0 - p), 1e-10);
            for (int r = 0; r < 3; ++r) {
                g[r] += (d[i] - p) * x[i][r];
                for (int c = 0; c < 3; ++c) a[r][c] += w * x[i][r] * x[i][c];
            }
        }
        for (int r = 0; r < 3; ++r) a[r][r] += ridge;
        // 3x3 Gaussian elimination with partial pivoting.
        double m[3][4];
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) m[r][c] = a[r][c];
            m[r][3] = g[r];
        }
        for (int col = 0; col < 3; ++col) {
            int piv = col;
            for (int r = col + 1; r < 3; ++r)
                if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
            std::swap(m[col], m[piv]);
            if (std::abs(m[col][col]) < 1e-30) continue;
            for (int r = 0; r < 3; ++r) {
                if (r == col) continue;
                const double f = m[r][col] / m[col][col];
                for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
            }
        }
        double step = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double delta = std::abs(m[c][c]) < 1e-30 ? 0.0 : m[c][3] / m[c][c];
            beta[c] += delta;
            step += std::abs(delta);
        }
        if (step < 1e-10) break;
    }
    return beta;
}

double zero_probability(const std::array<double, 3>& coef, double member) {
    const double delta = member == 0.0 ? 1.0 : 0.0;
    const double eta =
        std::clamp(coef[0] + coef[1] * std::cbrt(member) + coef[2] * delta, -30.0, 30.0);
    return 1.0 / (1.0 + std::exp(-eta));
}

struct PrecipRun {
    std::vector<double> weights;
    std::array<double, 2> var_coef;
    std::vector<double> llpath;
    std::vector<std::vector<double>> trace;
};

PrecipRun em_precip(const std::vector<double>& z, const std::vector<bool>& is_wet,
                    const std::vector<double>& logp0, const std::vector<double>& log1mp0,
                    const std::vector<double>& mu, const std::vector<double>& xvar,
                    std::size_t big_t, std::size_t k, std::vector<double> w0,
                    std::array<double, 2> c0, double c0_max, double h0_init, double h1_init,
                    const FitOptions& opt) {
    PrecipRun run;
    run.weights = std::move(w0);
    run.var_coef = c0;
    std::vector<double> resp(big_t * k);
    std::vector<double> logdens(k), rk(k);

    auto log_wet_kernel = [&](std::size_t t, std::size_t j, const std::array<double, 2>& c) {
        const double v = std::max(c[0] + c[1] * xvar[t * k + j], kLinkFloor);
        double shape, scale;
        gamma_from_moments(mu[t * k + j], v, shape, scale);
        return log_gamma_pdf(z[t], shape, scale);
    };
    auto q_of = [&](const std::array<double, 2>& c) {
        double q = 0.0;
        for (std::size_t t = 0; t < big_t; ++t) {
            if (!is_wet[t]) continue;
            for (std::size_t j = 0; j < k; ++j) q += resp[t * k + j] * log_wet_kernel(t, j, c);
        }
        return q;
    };

    double h0 = h0_init, h1 = h1_init;
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        std::vector<double> logw(k);
        for (std::size_t j = 0; j < k; ++j) logw[j] = std::log(run.weights[j]);
        double ll = 0.0;
        for (std::size_t t = 0; t < big_t; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                logdens[j] = logw[j] + (is_wet[t]
                                            ? log1mp0[t * k + j] + log_wet_kernel(t, j, run.var_coef)
                                            : logp0[t * k + j]);
            }
            ll += lse_responsibilities(logdens, rk);
            for (std::size_t j = 0; j < k; ++j) resp[t * k + j] = rk[j];
        }
        run.llpath.push_back(ll);
        if (opt.track_weights) run.trace.push_back(run.weights);
        if (iter > 0) {
            const double prev = run.llpath[run.llpath.size() - 2];
            if (std::abs(ll - prev) <= opt.rel_tol * (1.0 + std::abs(ll))) break;
        }
        std::fill(run.weights.begin(), run.weights.end(), 0.0);
        for (std::size_t t = 0; t < big_t; ++t)
            for (std::size_t j = 0; j < k; ++j) run.weights[j] += resp[t * k + j];
        for (double& w : run.weights) w /= double(big_t);
        normalize_weights(run.weights);

        std::array<double, 2> c = run.var_coef;
        double q = q_of(c);
        improve_coordinate(c[0], h0, 1e-6, c0_max, q,
                           [&](double v) { return q_of({v, c[1]}); });
        improve_coordinate(c[1], h1, -c0_max, c0_max, q,
                           [&](double v) { return q_of({c[0], v}); });
        run.var_coef = c;
    }
    return run;
}

}  // namespace

PrecipBmaModel fit_precip_bma(const TrainingSet& t, const FitOptions& opt) {
    const std::size_t k = member_count_of(t);
    for (const auto& pair : t)
        if (pair.obs < 0.0)
            throw std::invalid_argument("fit_precip_bma: negative observation in training set");

    std::vector<std::size_t> wet_idx;
    std::size_t dry_count = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].obs > 0.0)
            wet_idx.push_back(i);
        else
            ++dry_count;
    }
    if (dry_count == 0)
        throw FitError("fit_precip_bma: no zero observations in the training window");
    if (wet_idx.empty())
        throw FitError("fit_precip_bma: no positive observations in the training window");
    if (wet_idx.size() < 3)
        throw FitError("fit_precip_bma: only " + std::to_string(wet_idx.size()) +
                       " positive observations; too few to fit the gamma part");

    const std::size_t big_t = t.size();
    PrecipBmaModel model;
    model.logit_coef.resize(k);
    model.mean_coef.resize(k);

    // Logistic zero-probability fit per member, over all pairs.
    std::vector<double> dry_flag(big_t);
    for (std::size_t i = 0; i < big_t; ++i) dry_flag[i] = t[i].obs == 0.0 ? 1.0 : 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<std::array<double, 3>> design(big_t);
        for (std::size_t i = 0; i < big_t; ++i) {
            const double x = t[i].members[j];
            design[i] = {1.0, std::cbrt(x), x == 0.0 ? 1.0 : 0.0};
        }
        model.logit_coef[j] = logistic_irls(design, dry_flag);
    }

    // Gamma part on the cube-root scale over wet pairs.
    std::vector<double> z(big_t, 0.0);
    std::vector<bool> is_wet(big_t, false);
    for (std::size_t i : wet_idx) {
        z[i] = std::cbrt(t[i].obs);
        is_wet[i] = true;
    }
    std::vector<double> zw(wet_idx.size()), xw(wet_idx.size());
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < wet_idx.size(); ++i) {
            zw[i] = z[wet_idx[i]];
            xw[i] = std::cbrt(t[wet_idx[i]].members[j]);
        }
        model.mean_coef[j] = simple_least_squares(xw, zw);
    }

    std::vector<double> mu(big_t * k), xvar(big_t * k), logp0(big_t * k), log1mp0(big_t * k);
    double v0 = 0.0;
    double mean_abs_x = 0.0;
    for (std::size_t i = 0; i < big_t; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double x = t[i].members[j];
            mu[i * k + j] =
                std::max(model.mean_coef[j][0] + model.mean_coef[j][1] * std::cbrt(x), kLinkFloor);
            xvar[i * k + j] = x;
            const double p0 = std::clamp(zero_probability(model.logit_coef[j], x), 1e-12,
                                         1.0 - 1e-12);
            logp0[i * k + j] = std::log(p0);
            log1mp0[i * k + j] = std::log1p(-p0);
            if (is_wet[i]) {
                const double d = z[i] - mu[i * k + j];
                v0 += d * d;
            }
            mean_abs_x += std::abs(x);
        }
    v0 = std::max(v0 / double(wet_idx.size() * k), kLinkFloor);
    mean_abs_x /= double(big_t * k);
    const double c0_max = 100.0 * v0 + 10.0;
    const double h0 = std::max(0.5 * v0, 1e-3);
    const double h1 = std::max(0.5 * v0 / (mean_abs_x + 1.0), 1e-3);

    PrecipRun best = em_precip(z, is_wet, logp0, log1mp0, mu, xvar, big_t, k,
                               std::vector<double>(k, 1.0 / double(k)), {v0, 0.0}, c0_max, h0, h1,
                               opt);
    if (plateaued(best.llpath) && opt.restarts > 0) {
        num::RngStream jitter(0x9E1757u, num::RngStream::derive_stream("precip-restart", big_t, k));
        for (int r = 0; r < opt.restarts; ++r) {
            std::vector<double> w(k);
            for (double& v : w) v = 0.25 + jitter.uniform();
            normalize_weights(w);
            const double c0j = v0 * std::exp(1.4 * (jitter.uniform() - 0.5));
            PrecipRun cand = em_precip(z, is_wet, logp0, log1mp0, mu, xvar, big_t, k, std::move(w),
                                       {c0j, 0.0}, c0_max, h0, h1, opt);
            if (cand.llpath.back() > best.llpath.back()) best = std::move(cand);
        }
    }

    model.weights = std::move(best.weights);
    model.var_coef = best.var_coef;
    model.loglik_path = std::move(best.llpath);
    model.weight_trace = std::move(best.trace);
    return model;
}

// ---------------------------------------------------------------------------
// PredictiveMarginal

PredictiveMarginal::PredictiveMarginal(const GaussianBmaModel& m, std::vector<double> members)
    : kind_(Kind::gaussian), weights_(m.weights), members_(std::move(members)) {
    if (weights_.size() != members_.size())
        throw std::invalid_argument("PredictiveMarginal: member/weight count mismatch");
    mu_.resize(members_.size());
    for (std::size_t j = 0; j < members_.size(); ++j)
        mu_[j] = m.bias[j][0] + m.bias[j][1] * members_[j];
    sigma_ = std::sqrt(std::max(m.sigma2, kSigma2Floor));
}

PredictiveMarginal::PredictiveMarginal(const GammaBmaModel& m, std::vector<double> members)
    : kind_(Kind::gamma), weights_(m.weights), members_(std::move(members)) {
    if (weights_.size() != members_.size())
        throw std::invalid_argument("PredictiveMarginal: member/weight count mismatch");
    shape_.resize(members_.size());
    scale_.resize(members_.size());
    for (std::size_t j = 0; j < members_.size(); ++j) {
        const double x = members_[j];
        const double mean = std::max(m.mean_coef[j][0] + m.mean_coef[j][1] * x, kLinkFloor);
        const double var = std::max(m.var_coef[0] + m.var_coef[1] * x, kLinkFloor);
        gamma_from_moments(mean, var, shape_[j], scale_[j]);
    }
}

PredictiveMarginal::PredictiveMarginal(const PrecipBmaModel& m, std::vector<double> members)
    : kind_(Kind::precip), weights_(m.weights), members_(std::move(members)) {
    if (weights_.size() != members_.size())
        throw std::invalid_argument("PredictiveMarginal: member/weight count mismatch");
    shape_.resize(members_.size());
    scale_.resize(members_.size());
    p0_.resize(members_.size());
    alpha_ = 0.0;
    for (std::size_t j = 0; j < members_.size(); ++j) {
        const double x = members_[j];
        p0_[j] = zero_probability(m.logit_coef[j], x);
        const double mean =
            std::max(m.mean_coef[j][0] + m.mean_coef[j][1] * std::cbrt(x), kLinkFloor);
        const double var = std::max(m.var_coef[0] + m.var_coef[1] * x, kLinkFloor);
        gamma_from_moments(mean, var, shape_[j], scale_[j]);
        alpha_ += weights_[j] * p0_[j];
    }
}

double PredictiveMarginal::support_lo() const {
    return kind_ == Kind::gaussian ? -std::numeric_limits<double>::infinity() : 0.0;
}

double PredictiveMarginal::pdf(double y) const {
    const std::size_t k = weights_.size();
    switch (kind_) {
        case Kind::gaussian: {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                s += weights_[j] * num::std_normal_pdf((y - mu_[j]) / sigma_) / sigma_;
            return s;
        }
        case Kind::gamma: {
            if (y < 0.0) throw std::domain_error("pdf: negative value for a nonnegative variable");
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                s += weights_[j] * num::gamma_pdf(y, shape_[j], scale_[j]);
            return s;
        }
        case Kind::precip: {
            if (y < 0.0) throw std::domain_error("pdf: negative precipitation amount");
            if (y == 0.0) return alpha_;  // discrete mass, not a density
            const double z = std::cbrt(y);
            const double jac = 1.0 / (3.0 * z * z);
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                s += weights_[j] * (1.0 - p0_[j]) * num::gamma_pdf(z, shape_[j], scale_[j]);
            return s * jac;
        }
    }
    throw std::logic_error("pdf: bad kind");
}

double PredictiveMarginal::cdf(double y) const {
    const std::size_t k = weights_.size();
    switch (kind_) {
        case Kind::gaussian: {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                s += weights_[j] * num::std_normal_cdf((y - mu_[j]) / sigma_);
            return s;
        }
        case Kind::gamma: {
            if (y < 0.0) throw std::domain_error("cdf: negative value for a nonnegative variable");
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                s += weights_[j] * num::gamma_cdf(y, shape_[j], scale_[j]);
            return s;
        }
        case Kind::precip: {
            if (y < 0.0) throw std::domain_error("cdf: negative precipitation amount");
            const double z = std::cbrt(y);
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                s += weights_[j] *
                     (p0_[j] + (1.0 - p0_[j]) * num::gamma_cdf(z, shape_[j], scale_[j]));
            return s;
        }
    }
    throw std::logic_error("cdf: bad kind");
}

double PredictiveMarginal::continuous_cdf(double y) const { return cdf(y); }

double PredictiveMarginal::solve_quantile(double u) const {
    double lo, hi;
    if (kind_ == Kind::gaussian) {
        lo = *std::min_element(mu_.begin(), mu_.end()) - 10.0 * sigma_;
        hi = *std::max_element(mu_.begin(), mu_.end()) + 10.0 * sigma_;
        double width = hi - lo;
        while (cdf(lo) > u) {
            lo -= width;
            width *= 2.0;
        }
        width = hi - lo;
        while (cdf(hi) < u) {
            hi += width;
            width *= 2.0;
        }
    } else {
        lo = 0.0;
        double top = 1.0;
        for (std::size_t j = 0; j < weights_.size(); ++j) {
            const double mean = shape_[j] * scale_[j];
            const double sd = std::sqrt(shape_[j]) * scale_[j];
            top = std::max(top, mean + 12.0 * sd);
        }
        hi = kind_ == Kind::precip ? top * top * top : top;
        while (cdf(hi) < u) hi *= 2.0;
    }

    // Illinois-damped regula falsi with a bisection fallback.
    double ga = cdf(lo) - u;
    double gb = cdf(hi) - u;
    if (ga >= 0.0) return lo;
    if (gb <= 0.0) return hi;
    double a = lo, b = hi;
    for (int it = 0; it < 120; ++it) {
        double x = (a * gb - b * ga) / (gb - ga);
        if (!(x > a && x < b)) x = 0.5 * (a + b);
        const double gx = cdf(x) - u;
        if (std::abs(gx) <= 1e-12 || b - a <= 1e-13 * (1.0 + std::abs(a) + std::abs(b))) return x;
        if (gx < 0.0) {
            a = x;
            ga = gx;
            gb *= 0.5;
        } else {
            b = x;
            gb = gx;
            ga *= 0.5;
        }
    }
    return 0.5 * (a + b);
}

double PredictiveMarginal::quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("quantile: u must lie in (0,1)");
    if (kind_ == Kind::precip && u <= alpha_) return 0.0;
    return solve_quantile(u);
}

// ---------------------------------------------------------------------------
// Variant helpers and JSON

Kind kind_of(const BmaModel& m) {
    return std::visit(
        [](const auto& model) -> Kind {
            using T = std::decay_t<decltype(model)>;
            if constexpr (std::is_same_v<T, GaussianBmaModel>) return Kind::gaussian;
            if constexpr (std::is_same_v<T, GammaBmaModel>) return Kind::gamma;
            return Kind::precip;
        },
        m);
}

PredictiveMarginal make_marginal(const BmaModel& m, std::vector<double> members) {
    return std::visit(
        [&](const auto& model) { return PredictiveMarginal(model, std::move(members)); }, m);
}

nlohmann::json bma_model_to_json(const BmaModel& m) {
    nlohmann::json j;
    std::visit(
        [&](const auto& model) {
            using T = std::decay_t<decltype(model)>;
            j["weights"] = model.weights;
            if constexpr (std::is_same_v<T, GaussianBmaModel>) {
                j["kind"] = "gaussian";
                j["bias"] = model.bias;
                j["sigma2"] = model.sigma2;
            } else if constexpr (std::is_same_v<T, GammaBmaModel>) {
                j["kind"] = "gamma";
                j["mean_coef"] = model.mean_coef;
                j["var_coef"] = model.var_coef;
            } else {
                j["kind"] = "precip";
                j["logit_coef"] = model.logit_coef;
                j["mean_coef"] = model.mean_coef;
                j["var_coef"] = model.var_coef;
            }
        },
        m);
    return j;
}

BmaModel bma_model_from_json(const nlohmann::json& j) {
    const Kind kind = kind_from_name(j.at("kind").get<std::string>());
    switch (kind) {
        case Kind::gaussian: {
            GaussianBmaModel m;
            m.weights = j.at("weights").get<std::vector<double>>();
            m.bias = j.at("bias").get<std::vector<std::array<double, 2>>>();
            m.sigma2 = j.at("sigma2").get<double>();
            return m;
        }
        case Kind::gamma: {
            GammaBmaModel m;
            m.weights = j.at("weights").get<std::vector<double>>();
            m.mean_coef = j.at("mean_coef").get<std::vector<std::array<double, 2>>>();
            m.var_coef = j.at("var_coef").get<std::array<double, 2>>();
            return m;
        }
        case Kind::precip: {
            PrecipBmaModel m;
            m.weights = j.at("weights").get<std::vector<double>>();
            m.logit_coef = j.at("logit_coef").get<std::vector<std::array<double, 3>>>();
            m.mean_coef = j.at("mean_coef").get<std::vector<std::array<double, 2>>>();
            m.var_coef = j.at("var_coef").get<std::array<double, 2>>();
            return m;
        }
    }
    throw std::logic_error("bma_model_from_json: bad kind");
}

}  // namespace mvpost::bma
