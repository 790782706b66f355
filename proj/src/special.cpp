#include "nbvae/special.hpp"

#include <cmath>
#include <string>

#include "nbvae/common.hpp"

namespace nbvae {

namespace {

// Lanczos g = 7, n = 9 (Godfrey's coefficients).
constexpr double kLanczosG = 7.0;
constexpr double kLanczos[9] = {
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
};

double lgamma_core(double x) {
    // Valid for x >= 0.5.
    const double z = x - 1.0;
    double acc = kLanczos[0];
    for (int i = 1; i < 9; ++i) acc += kLanczos[i] / (z + i);
    const double t = z + kLanczosG + 0.5;
    return 0.5 * std::log(2.0 * M_PI) + (z + 0.5) * std::log(t) - t + std::log(acc);
}

}  // namespace

double lgamma_lanczos(double x) {
    if (!(x > 0.0)) {
        throw NumericDomainError("lgamma: argument must be positive, got " + std::to_string(x));
    }
    if (x < 0.5) {
        // Γ(x)Γ(1-x) = π / sin(πx)
        return std::log(M_PI / std::sin(M_PI * x)) - lgamma_core(1.0 - x);
    }
    return lgamma_core(x);
}

double digamma(double x) {
    if (!(x > 0.0)) {
        throw NumericDomainError("digamma: argument must be positive, got " + std::to_string(x));
    }
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    // Asymptotic series with Bernoulli numbers through B_14.
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv;
    result -= inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    return result;
}

}  // namespace nbvae
