#pragma once

#include <cmath>

namespace nbvae {

/// log Γ(x) for x > 0, Lanczos approximation (g = 7, 9 coefficients),
/// reflection below 0.5. Throws NumericDomainError for x <= 0.
double lgamma_lanczos(double x);

/// ψ(x) = d/dx log Γ(x) for x > 0: recurrence up to x >= 6, then the
/// asymptotic Bernoulli series. Backward rule of the lgamma op.
double digamma(double x);

inline double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_stable(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace nbvae
