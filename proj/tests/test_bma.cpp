#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "mvpost/bma.hpp"
#include "mvpost/rng.hpp"
#include "mvpost/special.hpp"
#include "support/oracles.hpp"

using namespace mvpost;
using Catch::Approx;

namespace {

bool loglik_nondecreasing(const std::vector<double>& path) {
    for (std::size_t i = 1; i < path.size(); ++i)
        if (path[i] < path[i - 1] - 1e-8 * (1.0 + std::abs(path[i - 1]))) return false;
    return true;
}

bool on_simplex(const std::vector<double>& w, double tol = 1e-12) {
    double sum = 0.0;
    for (double v : w) {
        if (v < -tol) return false;
        sum += v;
    }
    return std::abs(sum - 1.0) <= 1e-9;
}

bma::TrainingSet gaussian_k1_data(std::size_t n, double b0, double b1, double sd,
                                  std::uint64_t seed) {
    num::RngStream rng(seed, 1);
    bma::TrainingSet t;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 10.0 * rng.normal();
        t.push_back({{x}, b0 + b1 * x + sd * rng.normal()});
    }
    return t;
}

}  // namespace

TEST_CASE("fit_gaussian_bma recovers a K=1 linear model (least-squares oracle)") {
    const bma::TrainingSet t = gaussian_k1_data(500, 2.0, 0.5, 1.0, 99);
    const bma::GaussianBmaModel m = bma::fit_gaussian_bma(t);
    CHECK(m.weights.size() == 1);
    CHECK(m.weights[0] == Approx(1.0));
    CHECK(m.bias[0][0] == Approx(2.0).margin(0.1));
    CHECK(m.bias[0][1] == Approx(0.5).margin(0.1));
    CHECK(m.sigma2 == Approx(1.0).margin(0.1));

    // K=1 EM must land exactly on the least-squares solution.
    std::vector<double> xs, ys;
    for (const auto& pair : t) {
        xs.push_back(pair.members[0]);
        ys.push_back(pair.obs);
    }
    const auto ls = bma::simple_least_squares(xs, ys);
    CHECK(m.bias[0][0] == Approx(ls[0]).margin(1e-6));
    CHECK(m.bias[0][1] == Approx(ls[1]).margin(1e-6));
    double rss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - ls[0] - ls[1] * xs[i];
        rss += r * r;
    }
    CHECK(m.sigma2 == Approx(rss / double(xs.size())).margin(1e-6));
    CHECK(loglik_nondecreasing(m.loglik_path));
}

TEST_CASE("fit_gaussian_bma downweights a pure-noise member") {
    num::RngStream rng(4242, 1);
    bma::TrainingSet t;
    for (std::size_t i = 0; i < 500; ++i) {
        const double x1 = 8.0 * rng.normal();
        const double y = 1.0 + 0.9 * x1 + 0.8 * rng.normal();
        const double x2 = 8.0 * rng.normal();  // uncorrelated with y
        t.push_back({{x1, x2}, y});
    }
    const bma::GaussianBmaModel m = bma::fit_gaussian_bma(t);
    CHECK(on_simplex(m.weights));
    CHECK(m.weights[1] < 0.1);
    CHECK(loglik_nondecreasing(m.loglik_path));
}

TEST_CASE("fit_gaussian_bma degenerate inputs") {
    SECTION("constant observations") {
        bma::TrainingSet t;
        for (int i = 0; i < 30; ++i) t.push_back({{double(i)}, 5.0});
        CHECK_THROWS_AS(bma::fit_gaussian_bma(t), bma::FitError);
    }
    SECTION("observation equals member: sigma2 lands on the floor") {
        num::RngStream rng(8, 8);
        bma::TrainingSet t;
        for (int i = 0; i < 30; ++i) {
            const double x = rng.normal();
            t.push_back({{x}, x});
        }
        const bma::GaussianBmaModel m = bma::fit_gaussian_bma(t);
        CHECK(m.sigma2 == Approx(1e-6));
    }
    SECTION("too few pairs") {
        bma::TrainingSet t = gaussian_k1_data(3, 0.0, 1.0, 1.0, 1);
        CHECK_THROWS_AS(bma::fit_gaussian_bma(t), bma::FitError);
    }
}

TEST_CASE("weights stay on the simplex through every EM iteration") {
    num::RngStream rng(31337, 0);
    for (int rep = 0; rep < 5; ++rep) {
        bma::TrainingSet t;
        for (int i = 0; i < 60; ++i) {
            const double theta = 4.0 * rng.normal();
            std::vector<double> members;
            for (int k = 0; k < 3; ++k) members.push_back(theta + 0.3 * rng.normal());
            t.push_back({members, 0.5 + 0.9 * theta + rng.normal()});
        }
        bma::FitOptions opt;
        opt.track_weights = true;
        const bma::GaussianBmaModel m = bma::fit_gaussian_bma(t, opt);
        REQUIRE(!m.weight_trace.empty());
        for (const auto& w : m.weight_trace) CHECK(on_simplex(w));
    }
}

TEST_CASE("fit_gamma_bma recovers K=1 links against an ML oracle") {
    // y ~ Gamma with mean 3 + 0.8 x and variance 1 + 0.2 x.
    num::RngStream rng(777, 3);
    bma::TrainingSet t;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < 1000; ++i) {
        const double x = 2.0 + 6.0 * rng.uniform();
        const double mean = 3.0 + 0.8 * x;
        const double var = 1.0 + 0.2 * x;
        const double shape = mean * mean / var;
        const double scale = var / mean;
        const double y = num::gamma_quantile(rng.uniform(), shape, scale);
        t.push_back({{x}, y});
        xs.push_back(x);
        ys.push_back(y);
    }
    const bma::GammaBmaModel m = bma::fit_gamma_bma(t);
    CHECK(on_simplex(m.weights));
    CHECK(loglik_nondecreasing(m.loglik_path));
    CHECK(m.mean_coef[0][0] == Approx(3.0).margin(0.2));
    CHECK(m.mean_coef[0][1] == Approx(0.8).margin(0.2));
    CHECK(m.var_coef[0] == Approx(1.0).margin(0.2));
    CHECK(m.var_coef[1] == Approx(0.2).margin(0.2));

    // Independent route: generic optimizer on the K=1 gamma likelihood.
    auto negloglik = [&](const std::vector<double>& theta) {
        double nll = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double mean = std::max(theta[0] + theta[1] * xs[i], 1e-4);
            const double var = std::max(theta[2] + theta[3] * xs[i], 1e-4);
            const double shape = mean * mean / var;
            const double scale = var / mean;
            nll -= (shape - 1.0) * std::log(ys[i]) - ys[i] / scale - std::lgamma(shape) -
                   shape * std::log(scale);
        }
        return nll;
    };
    const auto ml = oracle::nelder_mead(negloglik, {2.0, 1.0, 2.0, 0.0}, 0.4);
    CHECK(ml[0] == Approx(3.0).margin(0.2));
    CHECK(ml[1] == Approx(0.8).margin(0.2));
    CHECK(m.mean_coef[0][0] == Approx(ml[0]).margin(0.25));
    CHECK(m.mean_coef[0][1] == Approx(ml[1]).margin(0.1));
    CHECK(m.var_coef[0] == Approx(ml[2]).margin(0.3));
    CHECK(m.var_coef[1] == Approx(ml[3]).margin(0.15));
}

TEST_CASE("fit_gamma_bma input validation") {
    bma::TrainingSet t;
    for (int i = 0; i < 30; ++i) t.push_back({{1.0}, double(i % 7 == 0 ? -1.0 : 2.0)});
    CHECK_THROWS_AS(bma::fit_gamma_bma(t), std::invalid_argument);

    bma::TrainingSet zeros;
    for (int i = 0; i < 30; ++i) zeros.push_back({{1.0}, 0.0});
    CHECK_THROWS_AS(bma::fit_gamma_bma(zeros), bma::FitError);
}

namespace {

bma::TrainingSet precip_data(std::size_t n, std::uint64_t seed, double a0 = 1.0,
                             double a1 = -0.9) {
    // P(y = 0 | x) = logistic(a0 + a1 * x^(1/3)); wet amounts gamma on the
    // cube-root scale with mean 0.2 + 0.8 x^(1/3).
    num::RngStream rng(seed, 17);
    bma::TrainingSet t;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform() < 0.25 ? 0.0 : std::pow(2.2 * rng.uniform(), 3.0);
        const double eta = a0 + a1 * std::cbrt(x);
        const double p0 = 1.0 / (1.0 + std::exp(-eta));
        double y = 0.0;
        if (rng.uniform() >= p0) {
            const double mean = 0.2 + 0.8 * std::cbrt(x);
            const double var = 0.05;
            const double z =
                num::gamma_quantile(rng.uniform(), mean * mean / var, var / mean);
            y = std::max(z * z * z, 1e-9);
        }
        t.push_back({{x}, y});
    }
    return t;
}

}  // namespace

TEST_CASE("fit_precip_bma recovers logistic coefficients (ML oracle)") {
    const bma::TrainingSet t = precip_data(1000, 555);
    const bma::PrecipBmaModel m = bma::fit_precip_bma(t);
    CHECK(on_simplex(m.weights));
    CHECK(loglik_nondecreasing(m.loglik_path));
    CHECK(m.logit_coef[0][0] == Approx(1.0).margin(0.3));
    CHECK(m.logit_coef[0][1] == Approx(-0.9).margin(0.3));

    // Independent ML route for the same logistic regression (including the
    // zero-member delta predictor).
    auto negloglik = [&](const std::vector<double>& beta) {
        double nll = 0.0;
        for (const auto& pair : t) {
            const double x = pair.members[0];
            const double eta = std::clamp(
                beta[0] + beta[1] * std::cbrt(x) + beta[2] * (x == 0.0 ? 1.0 : 0.0), -30.0, 30.0);
            const double p = 1.0 / (1.0 + std::exp(-eta));
            nll -= pair.obs == 0.0 ? std::log(std::max(p, 1e-12))
                                   : std::log(std::max(1.0 - p, 1e-12));
        }
        return nll;
    };
    const auto ml = oracle::nelder_mead(negloglik, {0.0, 0.0, 0.0}, 0.5);
    CHECK(m.logit_coef[0][0] == Approx(ml[0]).margin(0.02));
    CHECK(m.logit_coef[0][1] == Approx(ml[1]).margin(0.02));
    CHECK(m.logit_coef[0][2] == Approx(ml[2]).margin(0.05));
}

TEST_CASE("fit_precip_bma activates the delta predictor for zero members") {
    // Dry days happen mostly when the member is exactly zero, so the fitted
    // delta coefficient must push the zero probability up at x == 0.
    num::RngStream rng(2211, 4);
    bma::TrainingSet t;
    for (std::size_t i = 0; i < 600; ++i) {
        const double x = rng.uniform() < 0.4 ? 0.0 : std::pow(1.8 * rng.uniform() + 0.2, 3.0);
        const double p0 = x == 0.0 ? 0.85 : 0.15;
        double y = 0.0;
        if (rng.uniform() >= p0) {
            const double z = 0.4 + 0.8 * std::cbrt(x) + 0.2 * std::abs(rng.normal());
            y = z * z * z;
        }
        t.push_back({{x}, y});
    }
    const bma::PrecipBmaModel m = bma::fit_precip_bma(t);
    CHECK(m.logit_coef[0][2] > 0.5);
    const bma::PredictiveMarginal dry(m, {0.0});
    const bma::PredictiveMarginal wet(m, {8.0});
    CHECK(dry.point_mass_zero() > wet.point_mass_zero());
}

TEST_CASE("fit_precip_bma refuses all-dry and all-wet windows") {
    bma::TrainingSet dry;
    for (int i = 0; i < 50; ++i) dry.push_back({{0.5}, 0.0});
    CHECK_THROWS_WITH(bma::fit_precip_bma(dry),
                      Catch::Matchers::ContainsSubstring("no positive observations"));

    bma::TrainingSet wet;
    for (int i = 0; i < 50; ++i) wet.push_back({{0.5}, 1.0 + i * 0.1});
    CHECK_THROWS_WITH(bma::fit_precip_bma(wet),
                      Catch::Matchers::ContainsSubstring("no zero observations"));
}

// ---------------------------------------------------------------------------
// PredictiveMarginal

TEST_CASE("gaussian marginal pdf/cdf/quantile closed-form checks") {
    bma::GaussianBmaModel m;
    m.weights = {1.0};
    m.bias = {{0.0, 1.0}};
    m.sigma2 = 1.0;
    const bma::PredictiveMarginal pm(m, {5.0});
    CHECK(pm.pdf(5.0) == Approx(1.0 / std::sqrt(2.0 * M_PI)).margin(1e-12));
    CHECK(pm.cdf(5.0) == Approx(0.5).margin(1e-12));
    CHECK(pm.cdf(1e9) == Approx(1.0).margin(1e-9));
    CHECK(pm.quantile(0.5) == Approx(5.0).margin(1e-6));
    CHECK_THROWS_AS(pm.quantile(0.0), std::domain_error);
    CHECK_THROWS_AS(pm.quantile(1.0), std::domain_error);
}

TEST_CASE("two identical members collapse to the single kernel") {
    bma::GaussianBmaModel m;
    m.weights = {0.5, 0.5};
    m.bias = {{0.2, 0.9}, {0.2, 0.9}};
    m.sigma2 = 2.0;
    const bma::PredictiveMarginal two(m, {3.0, 3.0});
    bma::GaussianBmaModel single;
    single.weights = {1.0};
    single.bias = {{0.2, 0.9}};
    single.sigma2 = 2.0;
    const bma::PredictiveMarginal one(single, {3.0});
    for (double y = -5.0; y < 12.0; y += 0.7) {
        CHECK(two.pdf(y) == Approx(one.pdf(y)).margin(1e-14));
        CHECK(two.cdf(y) == Approx(one.cdf(y)).margin(1e-14));
    }
}

TEST_CASE("mixture cdf equals quadrature of the pdf") {
    bma::GaussianBmaModel gm;
    gm.weights = {0.3, 0.7};
    gm.bias = {{0.0, 1.0}, {1.0, 0.8}};
    gm.sigma2 = 1.5;
    const bma::PredictiveMarginal gauss(gm, {-1.0, 2.5});
    for (double y : {-2.0, 0.4, 3.0}) {
        const double quad = oracle::integrate([&](double t) { return gauss.pdf(t); }, -40.0, y,
                                              1e-9);
        CHECK(gauss.cdf(y) == Approx(quad).margin(1e-5));
    }

    bma::GammaBmaModel wm;
    wm.weights = {0.45, 0.55};
    wm.mean_coef = {{1.0, 0.7}, {0.5, 0.9}};
    wm.var_coef = {0.6, 0.1};
    const bma::PredictiveMarginal wind(wm, {4.0, 6.5});
    for (double y : {1.0, 4.0, 9.0}) {
        const double quad = oracle::integrate([&](double t) { return wind.pdf(t); }, 0.0, y, 1e-9);
        CHECK(wind.cdf(y) == Approx(quad).margin(1e-5));
    }
}

TEST_CASE("precipitation marginal handles the point mass at zero") {
    bma::PrecipBmaModel m;
    m.weights = {0.5, 0.5};
    m.logit_coef = {{0.8, -1.0, 0.5}, {0.2, -0.8, 0.4}};
    m.mean_coef = {{0.2, 0.8}, {0.3, 0.7}};
    m.var_coef = {0.05, 0.01};
    const bma::PredictiveMarginal pm(m, {0.0, 3.0});

    // cdf(0) equals the weighted mixture of the per-member zero probabilities.
    double alpha = 0.0;
    const double eta1 = 0.8 + 0.5;  // member 0 is exactly zero: delta fires
    alpha += 0.5 / (1.0 + std::exp(-eta1));
    const double eta2 = 0.2 - 0.8 * std::cbrt(3.0);
    alpha += 0.5 / (1.0 + std::exp(-eta2));
    CHECK(pm.point_mass_zero() == Approx(alpha).margin(1e-12));
    CHECK(pm.cdf(0.0) == Approx(alpha).margin(1e-12));
    CHECK(pm.pdf(0.0) == Approx(alpha).margin(1e-12));  // discrete mass report

    // Continuous part integrates to 1 - alpha. Substituting y = z^3 tames the
    // integrable singularity a sub-1 shape kernel puts at zero.
    const double integral = oracle::integrate(
        [&](double z) { return pm.pdf(z * z * z) * 3.0 * z * z; }, 1e-9, 4.0, 1e-9);
    CHECK(integral == Approx(1.0 - alpha).margin(1e-4));

    // point-mass rule for the pseudo-inverse
    CHECK(pm.quantile(alpha * 0.5) == 0.0);
    CHECK(pm.quantile(alpha) == 0.0);
    const double y9 = pm.quantile(0.9);
    CHECK(y9 > 0.0);
    CHECK(pm.cdf(y9) == Approx(0.9).margin(1e-6));
    CHECK_THROWS_AS(pm.cdf(-0.5), std::domain_error);
}

TEST_CASE("quantile/cdf round trips") {
    bma::GammaBmaModel wm;
    wm.weights = {0.6, 0.4};
    wm.mean_coef = {{1.2, 0.6}, {0.4, 0.8}};
    wm.var_coef = {0.9, 0.05};
    const bma::PredictiveMarginal wind(wm, {5.0, 7.0});
    for (double y = 0.5; y < 15.0; y += 0.5) {
        const double u = wind.cdf(y);
        // y-space recovery is ill-conditioned where the density vanishes
        if (u <= 1e-6 || u >= 1.0 - 1e-6) continue;
        CHECK(wind.quantile(u) == Approx(y).margin(1e-5));
    }
    for (double u = 0.02; u < 0.999; u += 0.04)
        CHECK(wind.cdf(wind.quantile(u)) == Approx(u).margin(1e-6));
}

TEST_CASE("fitted marginal cdf is nondecreasing on a dense grid") {
    const bma::TrainingSet t = gaussian_k1_data(60, 1.0, 0.8, 1.3, 5150);
    const bma::GaussianBmaModel m = bma::fit_gaussian_bma(t);
    const bma::PredictiveMarginal pm(m, {2.0});
    double prev = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double y = -30.0 + 60.0 * double(i) / 999.0;
        const double u = pm.cdf(y);
        CHECK(u >= prev);
        prev = u;
    }
}

TEST_CASE("gamma moment mapping reproduces mean and variance exactly") {
    bma::GammaBmaModel m;
    m.weights = {1.0};
    m.mean_coef = {{2.0, 0.5}};
    m.var_coef = {1.0, 0.25};
    const double x = 4.0;
    const bma::PredictiveMarginal pm(m, {x});
    const double mean = 2.0 + 0.5 * x;
    const double var = 1.0 + 0.25 * x;
    // shape = mean^2/var, scale = var/mean gives back (shape*scale, shape*scale^2)
    const double mean_quad =
        oracle::integrate([&](double t) { return t * pm.pdf(t); }, 0.0, 200.0, 1e-10);
    const double m2 =
        oracle::integrate([&](double t) { return t * t * pm.pdf(t); }, 0.0, 200.0, 1e-10);
    CHECK(mean_quad == Approx(mean).margin(1e-6));
    CHECK(m2 - mean_quad * mean_quad == Approx(var).margin(1e-5));
}

TEST_CASE("model JSON round trip") {
    bma::PrecipBmaModel m;
    m.weights = {0.25, 0.75};
    m.logit_coef = {{0.1, -0.2, 0.3}, {0.4, -0.5, 0.6}};
    m.mean_coef = {{0.7, 0.8}, {0.9, 1.0}};
    m.var_coef = {0.11, 0.02};
    const nlohmann::json j = bma::bma_model_to_json(bma::BmaModel(m));
    const bma::BmaModel back = bma::bma_model_from_json(j);
    const auto& pm = std::get<bma::PrecipBmaModel>(back);
    CHECK(pm.weights == m.weights);
    CHECK(pm.logit_coef == m.logit_coef);
    CHECK(pm.mean_coef == m.mean_coef);
    CHECK(pm.var_coef == m.var_coef);
    CHECK(bma::kind_of(back) == bma::Kind::precip);
}
