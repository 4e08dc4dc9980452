#include "mvpost/verification.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mvpost::verif {

namespace {

double sq_norm_diff(const num::Matrix& m, std::size_t row, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        const double d = m(row, j) - v[j];
        s += d * d;
    }
    return s;
}

double row_distance(const num::Matrix& m, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        const double d = m(a, j) - m(b, j);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

void RankHistogram::add(int rank) {
    if (rank < 1 || std::size_t(rank) > counts.size())
        throw std::out_of_range("RankHistogram::add: rank outside 1..bins");
    ++counts[std::size_t(rank) - 1];
    ++total;
}

void RankHistogram::merge(const RankHistogram& other) {
    if (counts.empty()) counts.resize(other.counts.size(), 0);
    if (counts.size() != other.counts.size())
        throw std::invalid_argument("RankHistogram::merge: bin count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    total += other.total;
}

double reliability_index(const RankHistogram& h) {
    if (h.total == 0) throw std::domain_error("reliability_index: empty histogram");
    const double uniform = 1.0 / double(h.counts.size());
    double delta = 0.0;
    for (std::uint64_t c : h.counts) delta += std::abs(double(c) / double(h.total) - uniform);
    return delta;
}

int multivariate_rank(std::span<const double> obs, const num::Matrix& forecast,
                      num::RngStream& rng) {
    const std::size_t m = forecast.rows();
    const std::size_t p = forecast.cols();
    if (obs.size() != p)
        throw std::invalid_argument("multivariate_rank: observation dimension mismatch");

    // Pooled set: index 0 is the observation, 1..m the forecast rows.
    auto coord = [&](std::size_t i, std::size_t j) {
        return i == 0 ? obs[j] : forecast(i - 1, j);
    };
    auto dominated = [&](std::size_t a, std::size_t b) {
        // a <= b in every component
        for (std::size_t j = 0; j < p; ++j)
            if (coord(a, j) > coord(b, j)) return false;
        return true;
    };
    std::vector<int> prerank(m + 1, 0);
    for (std::size_t i = 0; i <= m; ++i)
        for (std::size_t l = 0; l <= m; ++l)
            if (dominated(l, i)) ++prerank[i];

    int below = 0, tied = 0;
    for (std::size_t i = 0; i <= m; ++i) {
        if (prerank[i] < prerank[0]) ++below;
        if (prerank[i] == prerank[0]) ++tied;
    }
    return below + 1 + int(rng.uniform_int(std::uint64_t(tied)));
}

DsResult determinant_sharpness(const num::Matrix& forecast) {
    const std::size_t n = forecast.rows();
    const std::size_t p = forecast.cols();
    if (n <= p)
        throw std::invalid_argument("determinant_sharpness: need more samples than dimensions");

    std::vector<double> mean(p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) mean[j] += forecast(i, j);
    for (double& v : mean) v /= double(n);

    num::Matrix cov(p, p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < p; ++a) {
            const double da = forecast(i, a) - mean[a];
            for (std::size_t b = a; b < p; ++b) cov(a, b) += da * (forecast(i, b) - mean[b]);
        }
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = a; b < p; ++b) {
            cov(a, b) /= double(n - 1);
            cov(b, a) = cov(a, b);
        }

    const num::EigenSym eig = num::jacobi_eigensym(cov);
    const double top = std::max(eig.values.back(), 0.0);
    if (eig.values.front() <= 1e-10 * std::max(top, 1e-300)) return {0.0, true};
    double logdet = 0.0;
    for (double lam : eig.values) logdet += std::log(lam);
    return {std::exp(logdet / (2.0 * double(p))), false};
}

double geometric_median_objective(const num::Matrix& points, std::span<const double> at) {
    double s = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) s += std::sqrt(sq_norm_diff(points, i, at));
    return s;
}

std::vector<double> geometric_median(const num::Matrix& points) {
    const std::size_t n = points.rows();
    const std::size_t p = points.cols();
    if (n == 0) throw std::invalid_argument("geometric_median: no points");

    std::vector<double> y(p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) y[j] += points(i, j);
    for (double& v : y) v /= double(n);
    if (n == 1) return y;

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::sqrt(sq_norm_diff(points, i, y));
    const double eps = 1e-12 * (1.0 + scale / double(n));

    std::vector<double> t(p), next(p);
    for (int iter = 0; iter < 500; ++iter) {
        std::fill(t.begin(), t.end(), 0.0);
        double wsum = 0.0;
        double eta = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = std::sqrt(sq_norm_diff(points, i, y));
            if (d <= eps) {
                eta += 1.0;
                continue;
            }
            const double w = 1.0 / d;
            wsum += w;
            for (std::size_t j = 0; j < p; ++j) t[j] += w * points(i, j);
        }
        if (wsum == 0.0) break;  // every point coincides with the iterate
        for (std::size_t j = 0; j < p; ++j) t[j] /= wsum;

        if (eta == 0.0) {
            next = t;
        } else {
            // Vardi-Zhang step when the iterate sits on a data point.
            double r = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double g = wsum * (t[j] - y[j]);
                r += g * g;
            }
            r = std::sqrt(r);
            if (r <= eta) break;  // the data point is the median
            const double gamma = eta / r;
            for (std::size_t j = 0; j < p; ++j) next[j] = (1.0 - gamma) * t[j] + gamma * y[j];
        }

        double step = 0.0, ynorm = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            step += (next[j] - y[j]) * (next[j] - y[j]);
            ynorm += y[j] * y[j];
        }
        y = next;
        if (std::sqrt(step) < 1e-9 * (1.0 + std::sqrt(ynorm))) break;
    }
    return y;
}

double euclidean_error(const num::Matrix& forecast, std::span<const double> obs) {
    if (obs.size() != forecast.cols())
        throw std::invalid_argument("euclidean_error: observation dimension mismatch");
    const std::vector<double> med = geometric_median(forecast);
    double s = 0.0;
    for (std::size_t j = 0; j < obs.size(); ++j) s += (med[j] - obs[j]) * (med[j] - obs[j]);
    return std::sqrt(s);
}

double energy_score_exact(const num::Matrix& forecast, std::span<const double> obs) {
    const std::size_t m = forecast.rows();
    if (m == 0) throw std::invalid_argument("energy_score_exact: empty forecast");
    if (obs.size() != forecast.cols())
        throw std::invalid_argument("energy_score_exact: observation dimension mismatch");
    double to_obs = 0.0;
    for (std::size_t i = 0; i < m; ++i) to_obs += std::sqrt(sq_norm_diff(forecast, i, obs));
    double pairwise = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) pairwise += row_distance(forecast, i, j);
    return to_obs / double(m) - pairwise / double(m * m);
}

double energy_score_mc(const num::Matrix& forecast_a, const num::Matrix& forecast_b,
                       std::span<const double> obs) {
    const std::size_t n = forecast_a.rows();
    if (n == 0 || forecast_b.rows() != n || forecast_a.cols() != forecast_b.cols())
        throw std::invalid_argument("energy_score_mc: blocks must be nonempty and equal-sized");
    if (obs.size() != forecast_a.cols())
        throw std::invalid_argument("energy_score_mc: observation dimension mismatch");
    double to_obs = 0.0, between = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        to_obs += std::sqrt(sq_norm_diff(forecast_a, i, obs));
        double s = 0.0;
        for (std::size_t j = 0; j < forecast_a.cols(); ++j) {
            const double d = forecast_a(i, j) - forecast_b(i, j);
            s += d * d;
        }
        between += std::sqrt(s);
    }
    return to_obs / double(n) - between / (2.0 * double(n));
}

double crps_ensemble(std::span<const double> forecast, double obs) {
    const std::size_t m = forecast.size();
    if (m == 0) throw std::invalid_argument("crps_ensemble: empty forecast");
    std::vector<double> sorted(forecast.begin(), forecast.end());
    std::sort(sorted.begin(), sorted.end());
    double to_obs = 0.0, spread = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        to_obs += std::abs(sorted[i] - obs);
        spread += (2.0 * double(i + 1) - double(m) - 1.0) * sorted[i];
    }
    return to_obs / double(m) - spread / double(m * m);
}

NormalizationSpec NormalizationSpec::from_observations(const num::Matrix& obs,
                                                       const std::vector<std::string>& names) {
    const std::size_t n = obs.rows();
    const std::size_t p = obs.cols();
    if (n < 2) throw std::invalid_argument("NormalizationSpec: need at least two cases");
    NormalizationSpec spec;
    spec.mean.assign(p, 0.0);
    spec.sd.assign(p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) spec.mean[j] += obs(i, j);
    for (double& v : spec.mean) v /= double(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            const double d = obs(i, j) - spec.mean[j];
            spec.sd[j] += d * d;
        }
    for (std::size_t j = 0; j < p; ++j) {
        spec.sd[j] = std::sqrt(spec.sd[j] / double(n - 1));
        if (spec.sd[j] == 0.0) {
            const std::string label =
                j < names.size() ? names[j] : "variable " + std::to_string(j);
            throw std::runtime_error("NormalizationSpec: " + label +
                                     " has zero standard deviation over the test set");
        }
    }
    return spec;
}

void normalize_rows(num::Matrix& m, const NormalizationSpec& spec) {
    if (m.cols() != spec.mean.size())
        throw std::invalid_argument("normalize_rows: dimension mismatch");
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            m(i, j) = (m(i, j) - spec.mean[j]) / spec.sd[j];
}

void normalize_values(std::span<double> v, const NormalizationSpec& spec) {
    if (v.size() != spec.mean.size())
        throw std::invalid_argument("normalize_values: dimension mismatch");
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = (v[j] - spec.mean[j]) / spec.sd[j];
}

}  // namespace mvpost::verif
