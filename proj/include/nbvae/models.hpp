#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nbvae/diff.hpp"
#include "nbvae/distributions.hpp"
#include "nbvae/sparse_data.hpp"

namespace nbvae {

enum class Variant { Nbvae, NbvaeDm, NbvaeB, NbvaeC, Multivae };

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

/// Architecture and seed of one model. encoder_layers are the hidden widths
/// between the input and the two Gaussian heads; decoder_layers sit between
/// the latent code and the output heads. The feature encoder (nbvae_c)
/// reuses encoder_layers for its trunk. Hidden activation is tanh
/// throughout.
struct ModelConfig {
    Variant variant = Variant::Nbvae;
    std::size_t input_dim = 0;   // V
    std::size_t latent_dim = 0;  // K
    std::vector<std::size_t> encoder_layers;
    std::vector<std::size_t> decoder_layers;
    std::size_t feature_dim = 0;  // D; required exactly when variant == NbvaeC
    std::uint64_t seed = 0;

    void validate() const;
    bool needs_binary_data() const { return variant == Variant::NbvaeB || variant == Variant::NbvaeC; }
};

struct AffineParams {
    diff::Parameter weight;
    diff::Parameter bias;
};

/// All trainable weights of one model. Heads:
///  - encoder_mean / encoder_logvar produce the posterior Gaussian;
///  - rate_head produces f(z) with r = exp(f(z)); for multivae its raw
///    output serves as the multinomial logits;
///  - prob_head produces the logits of p (length V, or 1 for nbvae_dm;
///    absent for multivae);
///  - feature_* implement the conditional prior (nbvae_c only).
struct ModelParams {
    ModelConfig config;

    std::vector<AffineParams> encoder_trunk;
    AffineParams encoder_mean;
    AffineParams encoder_logvar;

    std::vector<AffineParams> decoder_trunk;
    AffineParams rate_head;
    std::optional<AffineParams> prob_head;

    std::vector<AffineParams> feature_trunk;
    std::optional<AffineParams> feature_mean;
    std::optional<AffineParams> feature_logvar;

    /// Xavier-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases,
    /// fully determined by config.seed.
    static ModelParams init(const ModelConfig& config);

    /// Stable enumeration (checkpoint and optimizer order).
    std::vector<diff::Parameter*> parameters();
    std::vector<const diff::Parameter*> parameters() const;

    void zero_grads();
    ModelParams clone() const;
};

/// One dense minibatch. counts is n x V (counts or 0/1 depending on the
/// variant); features is n x D for nbvae_c and empty otherwise.
struct Batch {
    diff::Matrix counts;
    diff::Matrix features;

    Eigen::Index size() const { return counts.rows(); }
};

Batch make_batch(const SparseCountMatrix& m, std::span<const std::size_t> rows,
                 const FeatureMatrix* features = nullptr);
Batch make_batch(const BinaryMatrix& m, std::span<const std::size_t> rows,
                 const FeatureMatrix* features = nullptr);

/// Variant-specific likelihood parameters from one latent code.
struct LikelihoodParams {
    Eigen::VectorXd rate;    // r (all NB variants)
    Eigen::VectorXd prob;    // p; length V, or 1 for nbvae_dm; empty for multivae
    Eigen::VectorXd logits;  // multivae only
};

/// q(z | y): encoder mean/variance for one row (counts pass through
/// log1p before the first affine layer).
LatentGaussian encode(const ModelParams& params, std::span<const double> y);

/// p(z | x): the conditional prior (nbvae_c only; contract error otherwise).
LatentGaussian feature_encode(const ModelParams& params, std::span<const double> x);

LikelihoodParams decode(const ModelParams& params, std::span<const double> z);

/// Where the reparameterized z is drawn from during training.
enum class LatentSource { Posterior, FeaturePrior };

struct ElboNodes {
    diff::Node* elbo;       // scalar: mean over rows of (loglik - beta * kl)
    diff::Node* mean_loglik;
    diff::Node* mean_kl;
};

/// Builds the full differentiable ELBO graph for the batch on the given
/// tape. noise must be batch-size x K standard normal draws. For
/// LatentSource::FeaturePrior (the nbvae_c alternating heuristic) z is
/// reparameterized from the feature-encoder prior instead of the posterior;
/// the reconstruction still scores the labels and the KL term is unchanged.
ElboNodes elbo_graph(diff::Tape& tape, ModelParams& params, const Batch& batch, double beta,
                     const diff::Matrix& noise, LatentSource source = LatentSource::Posterior);

/// Scalar ELBO node only.
diff::Node* elbo(diff::Tape& tape, ModelParams& params, const Batch& batch, double beta,
                 const diff::Matrix& noise, LatentSource source = LatentSource::Posterior);

}  // namespace nbvae
