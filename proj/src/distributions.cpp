#include "nbvae/distributions.hpp"

#include <cmath>
#include <string>

#include "nbvae/special.hpp"

namespace nbvae {

namespace {

void check_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size())
        throw DimensionError(std::string(what) + ": length mismatch, " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
}

double log1mexp(double x) {
    if (x > -M_LN2) return std::log(-std::expm1(x));
    return std::log1p(-std::exp(x));
}

}  // namespace

void LatentGaussian::validate() const {
    if (mean.size() != variance.size()) throw DimensionError("LatentGaussian: mean/variance length mismatch");
    for (Eigen::Index k = 0; k < variance.size(); ++k)
        if (!(variance[k] > 0.0))
            throw NumericDomainError("LatentGaussian: variance must be strictly positive at index " + std::to_string(k));
}

double nb_logpmf(double y, double r, double p) {
    if (!(r > 0.0)) throw NumericDomainError("nb_logpmf: r must be positive");
    if (!(p > 0.0 && p < 1.0)) throw NumericDomainError("nb_logpmf: p must lie in (0, 1)");
    if (y < 0.0) throw NumericDomainError("nb_logpmf: y must be non-negative");
    return lgamma_lanczos(y + r) - lgamma_lanczos(r) - lgamma_lanczos(y + 1.0) + y * std::log(p) +
           r * std::log1p(-p);
}

double nb_logpmf(std::span<const double> y, std::span<const double> r, std::span<const double> p) {
    check_same_length(y, r, "nb_logpmf");
    check_same_length(y, p, "nb_logpmf");
    double total = 0.0;
    for (std::size_t v = 0; v < y.size(); ++v) total += nb_logpmf(y[v], r[v], p[v]);
    return total;
}

double dirmulti_logpmf(std::span<const double> y, std::span<const double> r) {
    check_same_length(y, r, "dirmulti_logpmf");
    double n = 0.0, r_dot = 0.0, terms = 0.0;
    for (std::size_t v = 0; v < y.size(); ++v) {
        if (!(r[v] > 0.0)) throw NumericDomainError("dirmulti_logpmf: r must be positive elementwise");
        if (y[v] < 0.0) throw NumericDomainError("dirmulti_logpmf: y must be non-negative");
        n += y[v];
        r_dot += r[v];
        terms += lgamma_lanczos(y[v] + r[v]) - lgamma_lanczos(r[v]) - lgamma_lanczos(y[v] + 1.0);
    }
    return lgamma_lanczos(n + 1.0) + lgamma_lanczos(r_dot) - lgamma_lanczos(n + r_dot) + terms;
}

double multinomial_loglik(std::span<const double> y, std::span<const double> logits) {
    check_same_length(y, logits, "multinomial_loglik");
    double m = -std::numeric_limits<double>::infinity();
    for (double l : logits) m = std::max(m, l);
    double lse = 0.0;
    for (double l : logits) lse += std::exp(l - m);
    lse = m + std::log(lse);
    double total = 0.0;
    for (std::size_t v = 0; v < y.size(); ++v) total += y[v] * (logits[v] - lse);
    return total;
}

double bernoulli_link_loglik(std::span<const double> y, std::span<const double> r,
                             std::span<const double> p) {
    check_same_length(y, r, "bernoulli_link_loglik");
    check_same_length(y, p, "bernoulli_link_loglik");
    double total = 0.0;
    for (std::size_t v = 0; v < y.size(); ++v) {
        if (y[v] != 0.0 && y[v] != 1.0)
            throw ContractError("bernoulli_link_loglik: y must be binary, got " + std::to_string(y[v]) +
                                " at index " + std::to_string(v));
        if (!(r[v] > 0.0)) throw NumericDomainError("bernoulli_link_loglik: r must be positive");
        if (!(p[v] > 0.0 && p[v] < 1.0)) throw NumericDomainError("bernoulli_link_loglik: p must lie in (0, 1)");
        const double q = r[v] * std::log1p(-p[v]);  // log (1-p)^r  < 0
        total += (y[v] == 1.0) ? log1mexp(q) : q;
    }
    return total;
}

double kl_standard(const LatentGaussian& q) {
    q.validate();
    double total = 0.0;
    for (Eigen::Index k = 0; k < q.dim(); ++k)
        total += q.mean[k] * q.mean[k] + q.variance[k] - 1.0 - std::log(q.variance[k]);
    return 0.5 * total;
}

double kl_general(const LatentGaussian& q, const LatentGaussian& p) {
    q.validate();
    p.validate();
    if (q.dim() != p.dim()) throw DimensionError("kl_general: dimension mismatch");
    double total = 0.0;
    for (Eigen::Index k = 0; k < q.dim(); ++k) {
        const double d = q.mean[k] - p.mean[k];
        total += std::log(p.variance[k] / q.variance[k]) + (q.variance[k] + d * d) / p.variance[k] - 1.0;
    }
    return 0.5 * total;
}

Eigen::VectorXd reparam_sample(const LatentGaussian& q, std::span<const double> noise) {
    q.validate();
    if (static_cast<Eigen::Index>(noise.size()) != q.dim())
        throw DimensionError("reparam_sample: noise length mismatch");
    Eigen::VectorXd z(q.dim());
    for (Eigen::Index k = 0; k < q.dim(); ++k) z[k] = q.mean[k] + std::sqrt(q.variance[k]) * noise[k];
    return z;
}

}  // namespace nbvae
