#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvpost/matrix.hpp"
#include "mvpost/rng.hpp"

namespace mvpost::verif {

/// Bin counts of observation ranks 1..m+1 over a case set.
struct RankHistogram {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    RankHistogram() = default;
    explicit RankHistogram(std::size_t bins) : counts(bins, 0) {}

    void add(int rank);
    void merge(const RankHistogram& other);
};

/// L1 deviation of the observed rank frequencies from uniformity.
double reliability_index(const RankHistogram& h);

/// Rank of the observation within the pooled set {obs, forecast rows} under
/// componentwise pre-ranks, ties resolved uniformly at random.
int multivariate_rank(std::span<const double> obs, const num::Matrix& forecast,
                      num::RngStream& rng);

struct DsResult {
    double value = 0.0;
    bool degenerate = false;
};

/// det(Sigma)^(1/(2p)) of the empirical covariance of the forecast rows.
/// A singular covariance yields value 0 with the degenerate flag set.
DsResult determinant_sharpness(const num::Matrix& forecast);

/// Vardi-Zhang modified Weiszfeld iteration; handles iterates landing on
/// data points.
std::vector<double> geometric_median(const num::Matrix& points);

double geometric_median_objective(const num::Matrix& points, std::span<const double> at);

/// Distance between the forecast's geometric median and the observation.
double euclidean_error(const num::Matrix& forecast, std::span<const double> obs);

/// Ensemble form of the energy score (exact double sum over m members).
double energy_score_exact(const num::Matrix& forecast, std::span<const double> obs);

/// Monte Carlo form from two independent equal-size sample blocks.
double energy_score_mc(const num::Matrix& forecast_a, const num::Matrix& forecast_b,
                       std::span<const double> obs);

/// Ensemble CRPS through the sorted-sample identity (no pairwise loop).
double crps_ensemble(std::span<const double> forecast, double obs);

/// Per-variable observed mean and standard deviation over a test set.
struct NormalizationSpec {
    std::vector<double> mean;
    std::vector<double> sd;

    static NormalizationSpec from_observations(const num::Matrix& obs,
                                               const std::vector<std::string>& names = {});
};

void normalize_rows(num::Matrix& m, const NormalizationSpec& spec);
void normalize_values(std::span<double> v, const NormalizationSpec& spec);

struct ScoreSummary {
    double es = 0.0;
    double ee = 0.0;
    double delta = 0.0;
    double ds = 0.0;
    std::uint64_t cases = 0;
};

}  // namespace mvpost::verif
