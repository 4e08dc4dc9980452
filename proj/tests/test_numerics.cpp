#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mvpost/matrix.hpp"
#include "mvpost/rng.hpp"
#include "mvpost/special.hpp"
#include "support/oracles.hpp"

using namespace mvpost;
using Catch::Approx;

TEST_CASE("std_normal_cdf basics") {
    CHECK(num::std_normal_cdf(0.0) == Approx(0.5).margin(1e-15));
    CHECK(num::std_normal_cdf(40.0) == Approx(1.0).margin(1e-15));
    CHECK(num::std_normal_cdf(1.959963985) == Approx(0.975).margin(1e-9));
    CHECK_THROWS_AS(num::std_normal_cdf(std::numeric_limits<double>::quiet_NaN()),
                    std::domain_error);
    CHECK_THROWS_AS(num::std_normal_cdf(std::numeric_limits<double>::infinity()),
                    std::domain_error);
}

TEST_CASE("std_normal_cdf against series/continued-fraction oracle") {
    double prev = 0.0;
    for (double x = -9.0; x <= 9.0; x += 0.0625) {
        const double got = num::std_normal_cdf(x);
        CHECK(std::abs(got - oracle::norm_cdf(x)) <= 1e-12);
        CHECK(got >= prev);  // monotone
        prev = got;
    }
}

TEST_CASE("std_normal_quantile basics") {
    CHECK(num::std_normal_quantile(0.5) == Approx(0.0).margin(1e-15));
    CHECK(num::std_normal_quantile(0.975) == Approx(1.959963985).margin(1e-8));
    for (double u : {0.01, 0.1, 0.3, 0.45}) {
        CHECK(num::std_normal_quantile(u) ==
              Approx(-num::std_normal_quantile(1.0 - u)).margin(1e-12));
    }
    CHECK_THROWS_AS(num::std_normal_quantile(0.0), std::domain_error);
    CHECK_THROWS_AS(num::std_normal_quantile(1.0), std::domain_error);
    CHECK_THROWS_AS(num::std_normal_quantile(-0.2), std::domain_error);
}

TEST_CASE("normal cdf/quantile round trip on a dense grid") {
    for (double u = 1e-6; u < 1.0 - 1e-6; u += 0.001) {
        const double x = num::std_normal_quantile(u);
        CHECK(num::std_normal_cdf(x) == Approx(u).margin(1e-8));
    }
    // extreme tails
    for (double u : {1e-6, 1e-9, 1.0 - 1e-6, 1.0 - 1e-9})
        CHECK(num::std_normal_cdf(num::std_normal_quantile(u)) == Approx(u).epsilon(1e-6));
}

TEST_CASE("gamma_cdf special cases and oracle") {
    CHECK(num::gamma_cdf(1.0, 1.0, 1.0) == Approx(1.0 - std::exp(-1.0)).margin(1e-12));
    CHECK(num::gamma_cdf(0.0, 3.7, 2.0) == 0.0);
    CHECK(num::gamma_cdf(-1.0, 3.7, 2.0) == 0.0);
    CHECK(num::gamma_cdf(2.5, 3.0, 0.8) ==
          Approx(oracle::gamma_p_quadrature(3.0, 2.5 / 0.8)).margin(1e-10));
    CHECK_THROWS_AS(num::gamma_cdf(1.0, -1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(num::gamma_cdf(1.0, 1.0, 0.0), std::domain_error);

    for (double shape : {0.2, 0.9, 1.0, 2.5, 8.0, 30.0}) {
        double prev = -1.0;
        for (double y = 0.0; y < 6.0 * shape; y += 0.11 * shape) {
            const double got = num::gamma_cdf(y, shape, 1.0);
            CHECK(std::abs(got - oracle::gamma_p_quadrature(shape, y)) <= 1e-10);
            CHECK(got >= prev);
            prev = got;
        }
    }
}

TEST_CASE("gamma_quantile special cases") {
    CHECK(num::gamma_quantile(0.0, 2.0, 3.0) == 0.0);
    CHECK(num::gamma_quantile(1.0 - std::exp(-1.0), 1.0, 1.0) == Approx(1.0).margin(1e-8));
    const double via_bisect = num::bisect_increasing(
        [](double y) { return num::gamma_cdf(y, 2.0, 1.5); }, 0.9, 0.0, 100.0, 1e-12);
    CHECK(num::gamma_quantile(0.9, 2.0, 1.5) == Approx(via_bisect).margin(1e-7));
    CHECK_THROWS_AS(num::gamma_quantile(1.0, 2.0, 1.5), std::domain_error);
    CHECK_THROWS_AS(num::gamma_quantile(-0.1, 2.0, 1.5), std::domain_error);
}

TEST_CASE("gamma cdf/quantile round trip across shapes and scales") {
    num::RngStream rng(2024, 11);
    for (int i = 0; i < 60; ++i) {
        const double shape = 0.1 * std::pow(500.0, rng.uniform());  // 0.1 .. 50
        const double scale = 0.01 * std::pow(10000.0, rng.uniform());  // 0.01 .. 100
        for (double u : {1e-5, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0 - 1e-5}) {
            const double y = num::gamma_quantile(u, shape, scale);
            CHECK(num::gamma_cdf(y, shape, scale) == Approx(u).margin(1e-7));
        }
    }
}

TEST_CASE("bisect_increasing") {
    CHECK(num::bisect_increasing([](double x) { return x; }, 0.3, 0.0, 1.0, 1e-12) ==
          Approx(0.3).margin(1e-11));
    CHECK(num::bisect_increasing([](double x) { return x * x * x; }, 8.0, 0.0, 3.0, 1e-10) ==
          Approx(2.0).margin(1e-9));
    const double q = num::bisect_increasing([](double x) { return num::std_normal_cdf(x); },
                                            0.975, -10.0, 10.0, 1e-9);
    CHECK(q == Approx(num::std_normal_quantile(0.975)).margin(1e-6));
    CHECK_THROWS_AS(
        num::bisect_increasing([](double x) { return x; }, 2.0, 0.0, 1.0, 1e-12),
        std::domain_error);
}

TEST_CASE("Matrix invariants") {
    CHECK_THROWS_AS(num::Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}),
                    std::invalid_argument);
    const num::Matrix rect(2, 3);
    CHECK_THROWS_AS(num::cholesky_factor(rect), std::invalid_argument);
    CHECK_THROWS_AS(num::jacobi_eigensym(rect), std::invalid_argument);
}

TEST_CASE("cholesky_factor") {
    SECTION("identity") {
        const num::Matrix id = num::Matrix::identity(4);
        const num::Matrix l = num::cholesky_factor(id);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(l(i, j) == (i == j ? 1.0 : 0.0));
    }
    SECTION("2x2 closed form") {
        num::Matrix m(2, 2, {1.0, 0.5, 0.5, 1.0});
        const num::Matrix l = num::cholesky_factor(m);
        CHECK(l(1, 0) == Approx(0.5).margin(1e-15));
        CHECK(l(1, 1) == Approx(std::sqrt(0.75)).margin(1e-15));
    }
    SECTION("random SPD reconstruction") {
        num::RngStream rng(7, 1);
        for (int rep = 0; rep < 20; ++rep) {
            num::Matrix a(5, 5);
            for (auto& v : a.entries()) v = rng.normal();
            num::Matrix m = num::matmul(num::transpose(a), a);
            for (std::size_t i = 0; i < 5; ++i) m(i, i) += 1.0;
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = i + 1; j < 5; ++j) m(j, i) = m(i, j);
            const num::Matrix l = num::cholesky_factor(m);
            const num::Matrix back = num::matmul(l, num::transpose(l));
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 5; ++j)
                    CHECK(back(i, j) == Approx(m(i, j)).margin(1e-10));
        }
    }
    SECTION("non positive definite names the pivot") {
        num::Matrix bad(2, 2, {1.0, 2.0, 2.0, 1.0});
        try {
            num::cholesky_factor(bad);
            FAIL("expected DecompositionError");
        } catch (const num::DecompositionError& e) {
            CHECK(e.pivot() == 1);
        }
    }
}

TEST_CASE("nearest_correlation_repair") {
    SECTION("identity and already-PD inputs are fixed points") {
        const num::Matrix id = num::Matrix::identity(3);
        const num::Matrix rid = num::nearest_correlation_repair(id);
        CHECK(rid.entries() == id.entries());

        num::Matrix pd(3, 3, {1.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.0});
        const num::Matrix rpd = num::nearest_correlation_repair(pd);
        CHECK(rpd.entries() == pd.entries());
    }
    SECTION("equicorrelation with eigenvalue -0.01 is repaired") {
        const double rho = -0.505;  // eigenvalues: 1 + 2 rho = -0.01, 1 - rho twice
        num::Matrix m(3, 3, {1.0, rho, rho, rho, 1.0, rho, rho, rho, 1.0});
        const num::Matrix r = num::nearest_correlation_repair(m);
        for (std::size_t i = 0; i < 3; ++i) CHECK(r(i, i) == 1.0);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                CHECK(r(i, j) == r(j, i));
                CHECK(std::abs(r(i, j) - m(i, j)) <= 0.02);
            }
        CHECK(num::min_eigenvalue_sym(r) >= 1e-8);
        CHECK_NOTHROW(num::cholesky_factor(r));
    }
    SECTION("repair output always passes cholesky") {
        num::RngStream rng(99, 5);
        for (int rep = 0; rep < 25; ++rep) {
            // Random symmetric unit-diagonal matrix, frequently indefinite.
            num::Matrix m(4, 4, 0.0);
            for (std::size_t i = 0; i < 4; ++i) {
                m(i, i) = 1.0;
                for (std::size_t j = i + 1; j < 4; ++j)
                    m(i, j) = m(j, i) = 2.0 * rng.uniform() - 1.0;
            }
            const num::Matrix r = num::nearest_correlation_repair(m);
            CHECK_NOTHROW(num::cholesky_factor(r));
            CHECK(num::min_eigenvalue_sym(r) >= 1e-8);
        }
    }
}
