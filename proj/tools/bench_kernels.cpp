// Compares the serial reference kernels against their OpenMP versions.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "mvpost/bma.hpp"
#include "mvpost/copula.hpp"
#include "mvpost/kernels.hpp"
#include "mvpost/verification.hpp"

using namespace mvpost;

namespace {

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<copula::QuantileCache> demo_caches(std::size_t k) {
    std::vector<double> members;
    num::RngStream rng(17, 3);
    for (std::size_t i = 0; i < k; ++i) members.push_back(10.0 + 2.0 * rng.normal());

    bma::GaussianBmaModel gauss;
    gauss.weights.assign(k, 1.0 / double(k));
    gauss.bias.assign(k, {0.4, 0.95});
    gauss.sigma2 = 1.3;

    bma::GammaBmaModel gamma;
    gamma.weights.assign(k, 1.0 / double(k));
    gamma.mean_coef.assign(k, {0.6, 0.9});
    gamma.var_coef = {0.8, 0.1};

    bma::PrecipBmaModel precip;
    precip.weights.assign(k, 1.0 / double(k));
    precip.logit_coef.assign(k, {0.4, -1.4, 0.9});
    precip.mean_coef.assign(k, {0.1, 0.85});
    precip.var_coef = {0.06, 0.005};

    std::vector<double> wind_members, precip_members;
    for (std::size_t i = 0; i < k; ++i) {
        wind_members.push_back(5.0 + rng.uniform() * 3.0);
        precip_members.push_back(rng.uniform() < 0.3 ? 0.0 : rng.uniform() * 4.0);
    }

    std::vector<copula::QuantileCache> caches;
    caches.emplace_back(bma::PredictiveMarginal(gamma, wind_members));
    caches.emplace_back(bma::PredictiveMarginal(precip, precip_members));
    caches.emplace_back(bma::PredictiveMarginal(gauss, members));
    caches.emplace_back(bma::PredictiveMarginal(gauss, members));
    caches.emplace_back(bma::PredictiveMarginal(gauss, members));
    return caches;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t n = 200000;
    int jobs = 4;
    for (int i = 1; i + 1 < argc; i += 2) {
        if (std::strcmp(argv[i], "--samples") == 0) n = std::size_t(std::atoll(argv[i + 1]));
        if (std::strcmp(argv[i], "--jobs") == 0) jobs = std::atoi(argv[i + 1]);
    }

    const auto caches = demo_caches(8);
    const std::size_t p = caches.size();
    num::Matrix corr = num::Matrix::identity(p);
    corr(2, 3) = corr(3, 2) = 0.55;
    corr(3, 4) = corr(4, 3) = -0.35;
    corr(2, 4) = corr(4, 2) = -0.25;
    const copula::CorrelationMatrix c(num::nearest_correlation_repair(corr));
    const num::RngStream rng(99, 1);

    std::vector<double> serial_out(n * p), parallel_out(n * p);

    double t = now_s();
    kernels::copula_transform_serial(c.cholesky(), caches, rng, n, serial_out.data());
    const double t_serial = now_s() - t;

    t = now_s();
    kernels::copula_transform_parallel(c.cholesky(), caches, rng, n, parallel_out.data(), jobs);
    const double t_parallel = now_s() - t;

    const bool match = serial_out == parallel_out;

    std::printf("copula_transform  n=%zu p=%zu\n", n, p);
    std::printf("  serial      %8.3f s\n", t_serial);
    std::printf("  parallel x%d %8.3f s   speedup %.2fx   bit-identical: %s\n", jobs, t_parallel,
                t_serial / t_parallel, match ? "yes" : "NO");

    // Per-case scoring loop over the sampled rows, chunked into cases.
    const std::size_t case_size = 500;
    const std::size_t cases = n / case_size;
    std::vector<double> obs(p, 10.0);
    obs[0] = 6.0;
    obs[1] = 1.0;
    std::vector<double> es_serial(cases), es_parallel(cases);
    auto score = [&](std::vector<double>& out) {
        return [&, out_ptr = out.data()](std::size_t ci) {
            num::Matrix block(case_size, p);
            std::memcpy(block.entries().data(), serial_out.data() + ci * case_size * p,
                        case_size * p * sizeof(double));
            out_ptr[ci] = verif::energy_score_exact(block, obs);
        };
    };
    t = now_s();
    kernels::for_each_index_serial(cases, score(es_serial));
    const double s_serial = now_s() - t;
    t = now_s();
    kernels::for_each_index_parallel(cases, jobs, score(es_parallel));
    const double s_parallel = now_s() - t;

    std::printf("energy_score_exact over %zu cases of %zu samples\n", cases, case_size);
    std::printf("  serial      %8.3f s\n", s_serial);
    std::printf("  parallel x%d %8.3f s   speedup %.2fx   bit-identical: %s\n", jobs, s_parallel,
                s_serial / s_parallel, es_serial == es_parallel ? "yes" : "NO");
    return match && es_serial == es_parallel ? 0 : 1;
}
