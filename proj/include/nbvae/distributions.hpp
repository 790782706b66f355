#pragma once

#include <Eigen/Core>
#include <span>

#include "nbvae/common.hpp"

namespace nbvae {

/// Diagonal Gaussian over the K-dimensional latent code.
struct LatentGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;

    void validate() const;
    Eigen::Index dim() const { return mean.size(); }
};

/// Negative-binomial log pmf summed over dimensions:
///   sum_v [ lgamma(y + r) - lgamma(r) - lgamma(y + 1) + y log p + r log(1 - p) ]
/// Requires r > 0 and 0 < p < 1 elementwise.
double nb_logpmf(std::span<const double> y, std::span<const double> r, std::span<const double> p);
double nb_logpmf(double y, double r, double p);

/// Dirichlet-multinomial log pmf conditioned on the total n = sum_v y_v:
///   lgamma(n+1) - sum_v lgamma(y_v+1) + lgamma(r_.) - lgamma(n + r_.)
///   + sum_v [ lgamma(y_v + r_v) - lgamma(r_v) ]
double dirmulti_logpmf(std::span<const double> y, std::span<const double> r);

/// sum_v y_v log softmax(logits)_v; the multinomial coefficient is omitted
/// (constant in the parameters). Invariant to shifting all logits.
double multinomial_loglik(std::span<const double> y, std::span<const double> logits);

/// Bernoulli likelihood of the thresholded negative-binomial intensity:
///   sum_v [ y_v log(1 - (1-p_v)^{r_v}) + (1 - y_v) r_v log(1 - p_v) ]
/// y must be 0/1 elementwise.
double bernoulli_link_loglik(std::span<const double> y, std::span<const double> r,
                             std::span<const double> p);

/// KL(q || N(0, I)) = 1/2 sum_k (mu^2 + var - 1 - log var).
double kl_standard(const LatentGaussian& q);

/// KL(q || p) between diagonal Gaussians:
///   1/2 sum_k [ log(var_p/var_q) + (var_q + (mu_q - mu_p)^2)/var_p - 1 ]
double kl_general(const LatentGaussian& q, const LatentGaussian& p);

/// z = mu + sqrt(var) .* noise.
Eigen::VectorXd reparam_sample(const LatentGaussian& q, std::span<const double> noise);

}  // namespace nbvae
