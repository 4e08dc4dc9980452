#include "mvpost/copula.hpp"

#include <algorithm>
#include <cmath>

#include "mvpost/kernels.hpp"
#include "mvpost/special.hpp"

namespace mvpost::copula {

namespace {

constexpr double kCdfClampLo = 1e-12;
constexpr double kCdfClampHi = 1.0 - 1e-12;

}  // namespace

CorrelationMatrix::CorrelationMatrix(num::Matrix m) : matrix_(std::move(m)) {
    if (!matrix_.square()) throw std::invalid_argument("CorrelationMatrix: matrix not square");
    if (!matrix_.is_symmetric(0.0))
        throw std::invalid_argument("CorrelationMatrix: matrix not symmetric");
    for (std::size_t i = 0; i < matrix_.rows(); ++i)
        if (matrix_(i, i) != 1.0)
            throw std::invalid_argument("CorrelationMatrix: diagonal entry " + std::to_string(i) +
                                        " is not exactly 1");
    chol_ = num::cholesky_factor(matrix_);  // throws unless positive definite
}

CorrelationMatrix CorrelationMatrix::identity(std::size_t p) {
    return CorrelationMatrix(num::Matrix::identity(p));
}

LatentEntry latent_entry(const bma::PredictiveMarginal& marginal, double obs) {
    LatentEntry e;
    e.alpha = marginal.point_mass_zero();
    if (marginal.kind() == bma::Kind::precip && obs == 0.0) {
        e.censored = true;
        const double a = std::clamp(e.alpha, kCdfClampLo, kCdfClampHi);
        e.clamped = a != e.alpha;
        e.alpha = a;
        e.bound = num::std_normal_quantile(a);
        return e;
    }
    double u = marginal.cdf(obs);
    const double clamped = std::clamp(u, kCdfClampLo, kCdfClampHi);
    e.clamped = clamped != u;
    e.value = num::std_normal_quantile(clamped);
    return e;
}

LatentRecord latent_from_observation(const std::vector<bma::PredictiveMarginal>& marginals,
                                     std::span<const double> obs, std::string station,
                                     std::int64_t date) {
    if (marginals.size() != obs.size())
        throw std::invalid_argument("latent_from_observation: marginal/observation count mismatch");
    LatentRecord rec;
    rec.station = std::move(station);
    rec.date = date;
    rec.entries.reserve(marginals.size());
    for (std::size_t j = 0; j < marginals.size(); ++j)
        rec.entries.push_back(latent_entry(marginals[j], obs[j]));
    return rec;
}

CorrelationMatrix estimate_correlation(const std::vector<LatentRecord>& latents,
                                       const std::vector<std::string>& variable_names) {
    if (latents.empty()) throw EstimationError("estimate_correlation: no latent records");
    const std::size_t p = latents.front().entries.size();
    for (const auto& rec : latents)
        if (rec.entries.size() != p)
            throw EstimationError("estimate_correlation: latent dimension varies across records");
    const std::size_t t = latents.size();
    if (t < p + 1)
        throw EstimationError("estimate_correlation: need at least " + std::to_string(p + 1) +
                              " records, got " + std::to_string(t));

    auto var_label = [&](std::size_t j) {
        return j < variable_names.size() ? variable_names[j] : "variable " + std::to_string(j);
    };

    // Censored entries take the truncated-normal conditional mean -phi(q)/alpha.
    num::Matrix z(t, p);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            const LatentEntry& e = latents[i].entries[j];
            z(i, j) = e.censored ? -num::std_normal_pdf(e.bound) / e.alpha : e.value;
        }

    std::vector<double> mean(p, 0.0), sd(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < t; ++i) mean[j] += z(i, j);
        mean[j] /= double(t);
        for (std::size_t i = 0; i < t; ++i) sd[j] += (z(i, j) - mean[j]) * (z(i, j) - mean[j]);
        sd[j] = std::sqrt(sd[j] / double(t - 1));
        if (sd[j] == 0.0)
            throw EstimationError("estimate_correlation: " + var_label(j) +
                                  " has zero latent variance");
    }

    num::Matrix corr(p, p, 0.0);
    for (std::size_t a = 0; a < p; ++a) {
        corr(a, a) = 1.0;
        for (std::size_t b = a + 1; b < p; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < t; ++i)
                s += (z(i, a) - mean[a]) * (z(i, b) - mean[b]);
            const double r = s / (double(t - 1) * sd[a] * sd[b]);
            corr(a, b) = r;
            corr(b, a) = r;
        }
    }
    return CorrelationMatrix(num::nearest_correlation_repair(corr));
}

QuantileCache::QuantileCache(bma::PredictiveMarginal marginal, std::size_t grid_points)
    : marginal_(std::move(marginal)), alpha_(marginal_.point_mass_zero()) {
    if (grid_points < 16) throw std::invalid_argument("QuantileCache: grid too small");
    const double u_eps = 1e-8;
    grid_y_.resize(grid_points);
    grid_u_.resize(grid_points);
    if (marginal_.kind() == bma::Kind::precip) {
        // Grid on the cube-root scale, anchored at the point mass.
        const double a = std::clamp(alpha_, kCdfClampLo, kCdfClampHi);
        const double u_hi = a + (1.0 - a) * (1.0 - u_eps);
        const double z_hi = std::cbrt(marginal_.quantile(std::min(u_hi, kCdfClampHi)));
        for (std::size_t i = 0; i < grid_points; ++i) {
            const double zi = z_hi * double(i) / double(grid_points - 1);
            grid_y_[i] = zi * zi * zi;
            grid_u_[i] = i == 0 ? a : marginal_.cdf(grid_y_[i]);
        }
    } else {
        const double y_lo = marginal_.kind() == bma::Kind::gamma ? 0.0
                                                                 : marginal_.quantile(u_eps);
        const double y_hi = marginal_.quantile(1.0 - u_eps);
        for (std::size_t i = 0; i < grid_points; ++i) {
            grid_y_[i] = y_lo + (y_hi - y_lo) * double(i) / double(grid_points - 1);
            grid_u_[i] = marginal_.cdf(grid_y_[i]);
        }
    }
}

double QuantileCache::quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("QuantileCache::quantile: u not in (0,1)");
    if (marginal_.kind() == bma::Kind::precip && u <= alpha_) return 0.0;
    if (u < grid_u_.front() || u > grid_u_.back()) return marginal_.quantile(u);

    const auto it = std::upper_bound(grid_u_.begin(), grid_u_.end(), u);
    std::size_t hi_idx = std::size_t(it - grid_u_.begin());
    if (hi_idx == 0) hi_idx = 1;
    if (hi_idx >= grid_u_.size()) hi_idx = grid_u_.size() - 1;
    double a = grid_y_[hi_idx - 1], b = grid_y_[hi_idx];
    double ga = grid_u_[hi_idx - 1] - u, gb = grid_u_[hi_idx] - u;
    if (ga >= 0.0) return a;
    if (gb <= 0.0) return b;

    // Illinois-damped regula falsi against the exact cdf.
    for (int iter = 0; iter < 60; ++iter) {
        double x = (a * gb - b * ga) / (gb - ga);
        if (!(x > a && x < b)) x = 0.5 * (a + b);
        const double gx = marginal_.cdf(x) - u;
        if (std::abs(gx) <= 1e-9 || b - a <= 1e-13 * (1.0 + std::abs(a) + std::abs(b))) return x;
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

JointSample sample_joint(const std::vector<QuantileCache>& caches, const CorrelationMatrix& c,
                         std::size_t n, const num::RngStream& rng, int jobs) {
    if (caches.empty()) throw std::invalid_argument("sample_joint: no marginals");
    if (c.dim() != caches.size())
        throw std::invalid_argument("sample_joint: correlation dimension " +
                                    std::to_string(c.dim()) + " does not match marginal count " +
                                    std::to_string(caches.size()));
    if (n < 1) throw std::invalid_argument("sample_joint: need at least one sample");
    JointSample out{num::Matrix(n, caches.size())};
    kernels::copula_transform(c.cholesky(), caches, rng, n, out.values.entries().data(), jobs);
    return out;
}

JointSample sample_joint(const std::vector<bma::PredictiveMarginal>& marginals,
                         const CorrelationMatrix& c, std::size_t n, const num::RngStream& rng,
                         int jobs) {
    std::vector<QuantileCache> caches;
    caches.reserve(marginals.size());
    for (const auto& m : marginals) caches.emplace_back(m);
    return sample_joint(caches, c, n, rng, jobs);
}

JointSample independence_sample(const std::vector<QuantileCache>& caches, std::size_t n,
                                const num::RngStream& rng, int jobs) {
    return sample_joint(caches, CorrelationMatrix::identity(caches.size()), n, rng, jobs);
}

JointSample independence_sample(const std::vector<bma::PredictiveMarginal>& marginals,
                                std::size_t n, const num::RngStream& rng, int jobs) {
    return sample_joint(marginals, CorrelationMatrix::identity(marginals.size()), n, rng, jobs);
}

nlohmann::json correlation_to_json(const CorrelationFile& f) {
    nlohmann::json j;
    j["station"] = f.station;
    j["p"] = f.entries.rows();
    j["variables"] = f.variables;
    j["entries"] = f.entries.entries();
    j["training_period"] = {
        {"start", f.period_start}, {"end", f.period_end}, {"days_used", f.days_used}};
    return j;
}

CorrelationFile correlation_from_json(const nlohmann::json& j) {
    CorrelationFile f;
    f.station = j.at("station").get<std::string>();
    f.variables = j.at("variables").get<std::vector<std::string>>();
    const std::size_t p = j.at("p").get<std::size_t>();
    f.entries = num::Matrix(p, p, j.at("entries").get<std::vector<double>>());
    const auto& tp = j.at("training_period");
    f.period_start = tp.at("start").get<std::string>();
    f.period_end = tp.at("end").get<std::string>();
    f.days_used = tp.at("days_used").get<std::size_t>();
    return f;
}

}  // namespace mvpost::copula
