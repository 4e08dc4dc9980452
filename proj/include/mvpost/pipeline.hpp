#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpost/bma.hpp"
#include "mvpost/copula.hpp"
#include "mvpost/dataset.hpp"
#include "mvpost/verification.hpp"

namespace mvpost::pipeline {

struct RunConfig {
    std::filesystem::path calibration;
    std::filesystem::path test;
    std::filesystem::path outdir = "out";
    std::size_t window = 40;
    std::size_t samples = 20000;
    std::uint64_t seed = 0;
    std::vector<std::string> stations;  // empty selects every station
    std::vector<std::string> methods = {"raw", "independence", "copula"};
    int jobs = 1;

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
    bool wants(std::string_view method) const;
};

class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fits the kernel family matching the variable's support.
bma::BmaModel fit_variable_model(data::Variable v, const bma::TrainingSet& ts,
                                 const bma::FitOptions& opt = {});

/// Rolling-window marginals for every dataset variable at one station-day.
std::vector<bma::PredictiveMarginal> fit_day_marginals(const data::Dataset& d,
                                                       std::string_view station,
                                                       std::int64_t date, std::size_t window,
                                                       const bma::FitOptions& opt = {});

struct EstimateResult {
    std::map<std::string, std::size_t> latent_days;  // per fitted station
    std::vector<std::string> skipped_stations;
};

struct ForecastResult {
    std::size_t station_days = 0;
    std::size_t failed_days = 0;
};

struct MethodScores {
    verif::ScoreSummary summary;
    verif::RankHistogram histogram;
};

struct PairedDiff {
    double mean = 0.0;
    double se = 0.0;
};

struct VerifyResult {
    std::size_t cases = 0;
    std::vector<std::string> methods;
    std::map<std::string, MethodScores> pooled;
    std::map<std::string, std::map<std::string, verif::ScoreSummary>> by_station;
    PairedDiff es_copula_minus_independence;
    PairedDiff ee_copula_minus_independence;
    std::map<std::string, PairedDiff> crps_copula_minus_independence;  // per variable
};

/// Fit per-day marginals over the calibration year, infer latent gaussian
/// coordinates from the verifying observations, and persist one correlation
/// matrix per station.
EstimateResult estimate_stage(const RunConfig& config);

/// Fit marginals over the test period and persist joint samples under the
/// estimated correlation matrix and under independence.
ForecastResult forecast_stage(const RunConfig& config);

/// Score raw ensemble, independence, and copula forecasts with normalized
/// ES/EE/DS and the multivariate rank histogram.
VerifyResult verify_stage(const RunConfig& config);

void run_all(const RunConfig& config);

int cli_main(int argc, char** argv);

// Compressed columnar sample files written by the forecast stage.
void write_sample_file(const std::filesystem::path& path, const num::Matrix& values);
num::Matrix read_sample_file(const std::filesystem::path& path);

std::string fnv1a64_hex(const std::filesystem::path& path);

}  // namespace mvpost::pipeline
