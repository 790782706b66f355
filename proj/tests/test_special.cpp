#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nbvae/common.hpp"
#include "nbvae/special.hpp"

using namespace nbvae;

TEST_CASE("lgamma closed forms") {
    CHECK(lgamma_lanczos(1.0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(lgamma_lanczos(2.0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(std::abs(lgamma_lanczos(1.0)) < 1e-12);
    CHECK(std::abs(lgamma_lanczos(2.0)) < 1e-12);
    // lgamma(0.5) = log sqrt(pi)
    CHECK(lgamma_lanczos(0.5) == doctest::Approx(0.5723649429247001).epsilon(1e-12));
}

TEST_CASE("lgamma matches std::lgamma over [0.1, 1e6]") {
    // absolute error below 1e-10 wherever float64 can represent it; above
    // ~1e5 the value itself exceeds 1e-10 / ulp, so the bound switches to
    // 1e-14 relative
    double worst_score = 0.0;
    for (double x = 0.1; x <= 1e6; x *= 1.07) {
        const double got = lgamma_lanczos(x);
        const double want = std::lgamma(x);
        const double score = std::abs(got - want) / std::max(1e-10, 1e-14 * std::abs(want));
        worst_score = std::max(worst_score, score);
    }
    CHECK(worst_score < 1.0);
}

TEST_CASE("lgamma rejects the non-positive domain") {
    CHECK_THROWS_AS(lgamma_lanczos(0.0), NumericDomainError);
    CHECK_THROWS_AS(lgamma_lanczos(-3.0), NumericDomainError);
}

TEST_CASE("digamma known values") {
    // psi(1) = -Euler-Mascheroni
    CHECK(digamma(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-12));
    // psi(x+1) = psi(x) + 1/x
    CHECK(digamma(2.0) == doctest::Approx(1.0 - 0.5772156649015329).epsilon(1e-12));
    CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-12));
    CHECK_THROWS_AS(digamma(0.0), NumericDomainError);
}

TEST_CASE("digamma is the derivative of lgamma") {
    const double h = 1e-6;
    for (double x : {0.2, 0.7, 1.0, 3.5, 20.0, 500.0}) {
        const double fd = (lgamma_lanczos(x + h) - lgamma_lanczos(x - h)) / (2.0 * h);
        CHECK(digamma(x) == doctest::Approx(fd).epsilon(1e-7));
    }
}
