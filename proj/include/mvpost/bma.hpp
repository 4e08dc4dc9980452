#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace mvpost::bma {

/// Kernel family of a predictive marginal.
enum class Kind { gaussian, gamma, precip };

std::string_view kind_name(Kind k);
Kind kind_from_name(std::string_view name);

struct TrainingPair {
    std::vector<double> members;  // ensemble values x_1..x_K
    double obs = 0.0;             // verifying observation y
};

/// Rolling-window training data for one station and variable. K must be
/// constant across pairs.
using TrainingSet = std::vector<TrainingPair>;

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitOptions {
    int max_iter = 200;
    double rel_tol = 1e-6;
    int restarts = 3;          // jittered restarts when the fit plateaus
    bool track_weights = false;
};

/// Gaussian-kernel mixture: member k contributes N(b0_k + b1_k x_k, sigma2)
/// with weight weights[k]. sigma2 is shared across members.
struct GaussianBmaModel {
    std::vector<double> weights;
    std::vector<std::array<double, 2>> bias;  // (b0_k, b1_k)
    double sigma2 = 1.0;

    std::vector<double> loglik_path;                 // fit diagnostic
    std::vector<std::vector<double>> weight_trace;   // filled when track_weights
};

/// Gamma-kernel mixture for nonnegative variables: member k contributes a
/// gamma kernel with mean b0_k + b1_k x_k and variance c0 + c1 x_k.
struct GammaBmaModel {
    std::vector<double> weights;
    std::vector<std::array<double, 2>> mean_coef;
    std::array<double, 2> var_coef{1.0, 0.0};  // (c0, c1)

    std::vector<double> loglik_path;
    std::vector<std::vector<double>> weight_trace;
};

/// Two-part precipitation mixture: a per-member logistic probability of an
/// exactly-zero amount, plus a gamma kernel for the cube root of positive
/// amounts. The delta predictor of the logistic fires when x_k == 0.
struct PrecipBmaModel {
    std::vector<double> weights;
    std::vector<std::array<double, 3>> logit_coef;  // (a0_k, a1_k, a2_k)
    std::vector<std::array<double, 2>> mean_coef;   // cube-root scale
    std::array<double, 2> var_coef{1.0, 0.0};

    std::vector<double> loglik_path;
    std::vector<std::vector<double>> weight_trace;
};

GaussianBmaModel fit_gaussian_bma(const TrainingSet& t, const FitOptions& opt = {});
GammaBmaModel fit_gamma_bma(const TrainingSet& t, const FitOptions& opt = {});
PrecipBmaModel fit_precip_bma(const TrainingSet& t, const FitOptions& opt = {});

/// A one-day, one-variable predictive distribution: a fitted model resolved
/// against that day's ensemble members.
class PredictiveMarginal {
public:
    PredictiveMarginal(const GaussianBmaModel& m, std::vector<double> members);
    PredictiveMarginal(const GammaBmaModel& m, std::vector<double> members);
    PredictiveMarginal(const PrecipBmaModel& m, std::vector<double> members);

    Kind kind() const { return kind_; }
    std::size_t member_count() const { return members_.size(); }
    const std::vector<double>& members() const { return members_; }

    /// Discrete mass at zero; nonzero only for precipitation.
    double point_mass_zero() const { return alpha_; }

    /// Density of the continuous part. For precipitation, pdf(0) reports the
    /// discrete mass at zero instead of a density.
    double pdf(double y) const;
    double cdf(double y) const;

    /// Pseudo-inverse of the cdf for u in (0,1). Precipitation returns 0
    /// whenever u <= the point mass at zero.
    double quantile(double u) const;

    double support_lo() const;

private:
    double continuous_cdf(double y) const;
    double solve_quantile(double u) const;

    Kind kind_;
    std::vector<double> weights_;
    std::vector<double> members_;
    std::vector<double> mu_;  // gaussian kernel means
    double sigma_ = 1.0;
    std::vector<double> shape_, scale_;  // gamma kernels (precip: cube-root scale)
    std::vector<double> p0_;             // per-member zero probabilities
    double alpha_ = 0.0;
};

using BmaModel = std::variant<GaussianBmaModel, GammaBmaModel, PrecipBmaModel>;

Kind kind_of(const BmaModel& m);
PredictiveMarginal make_marginal(const BmaModel& m, std::vector<double> members);
nlohmann::json bma_model_to_json(const BmaModel& m);
BmaModel bma_model_from_json(const nlohmann::json& j);

// Least squares of y on a single regressor; returns (intercept, slope).
// Degenerate regressor spread yields slope 0.
std::array<double, 2> simple_least_squares(const std::vector<double>& x,
                                           const std::vector<double>& y);

}  // namespace mvpost::bma
