#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpost/bma.hpp"
#include "mvpost/matrix.hpp"
#include "mvpost/rng.hpp"

namespace mvpost::copula {

/// p x p positive-definite matrix with unit diagonal. Construction validates
/// and caches the Cholesky factor, so any instance in circulation is usable
/// for sampling.
class CorrelationMatrix {
public:
    explicit CorrelationMatrix(num::Matrix m);
    static CorrelationMatrix identity(std::size_t p);

    std::size_t dim() const { return matrix_.rows(); }
    const num::Matrix& matrix() const { return matrix_; }
    const num::Matrix& cholesky() const { return chol_; }
    double operator()(std::size_t i, std::size_t j) const { return matrix_(i, j); }

private:
    num::Matrix matrix_;
    num::Matrix chol_;
};

struct LatentEntry {
    double value = 0.0;     // latent gaussian coordinate (unset when censored)
    bool censored = false;  // interval (-inf, bound] instead of a point
    double bound = 0.0;     // quantile of alpha when censored
    double alpha = 0.0;     // point mass at zero of the generating marginal
    bool clamped = false;   // marginal cdf saturated and was clamped
};

/// Latent gaussian coordinates inferred for one station-day.
struct LatentRecord {
    std::string station;
    std::int64_t date = 0;
    std::vector<LatentEntry> entries;
};

LatentEntry latent_entry(const bma::PredictiveMarginal& marginal, double obs);
LatentRecord latent_from_observation(const std::vector<bma::PredictiveMarginal>& marginals,
                                     std::span<const double> obs, std::string station = {},
                                     std::int64_t date = 0);

class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sample correlation of the latent records. Censored entries are imputed
/// with the truncated-normal conditional mean, and the result is passed
/// through nearest_correlation_repair so it always factorizes.
CorrelationMatrix estimate_correlation(const std::vector<LatentRecord>& latents,
                                       const std::vector<std::string>& variable_names = {});

/// Inverse-CDF lookup table over a fixed grid with root refinement against
/// the exact mixture cdf. Owns a copy of the marginal.
class QuantileCache {
public:
    explicit QuantileCache(bma::PredictiveMarginal marginal, std::size_t grid_points = 2048);

    double quantile(double u) const;
    const bma::PredictiveMarginal& marginal() const { return marginal_; }

private:
    bma::PredictiveMarginal marginal_;
    std::vector<double> grid_y_;
    std::vector<double> grid_u_;
    double alpha_ = 0.0;
};

/// n sampled weather vectors in original units, one row per draw.
struct JointSample {
    num::Matrix values;
    std::size_t size() const { return values.rows(); }
    std::size_t dim() const { return values.cols(); }
};

JointSample sample_joint(const std::vector<QuantileCache>& caches, const CorrelationMatrix& c,
                         std::size_t n, const num::RngStream& rng, int jobs = 1);
JointSample sample_joint(const std::vector<bma::PredictiveMarginal>& marginals,
                         const CorrelationMatrix& c, std::size_t n, const num::RngStream& rng,
                         int jobs = 1);

/// sample_joint against the identity correlation matrix.
JointSample independence_sample(const std::vector<QuantileCache>& caches, std::size_t n,
                                const num::RngStream& rng, int jobs = 1);
JointSample independence_sample(const std::vector<bma::PredictiveMarginal>& marginals,
                                std::size_t n, const num::RngStream& rng, int jobs = 1);

/// Serialized correlation matrix plus its provenance.
struct CorrelationFile {
    std::string station;
    std::vector<std::string> variables;
    std::string period_start;
    std::string period_end;
    std::size_t days_used = 0;
    num::Matrix entries;
};

nlohmann::json correlation_to_json(const CorrelationFile& f);
CorrelationFile correlation_from_json(const nlohmann::json& j);

}  // namespace mvpost::copula
