#include "nbvae/models.hpp"

#include <cmath>

#include "nbvae/special.hpp"

namespace nbvae {

using diff::Matrix;
using diff::Node;
using diff::Tape;

Variant variant_from_string(const std::string& s) {
    if (s == "nbvae") return Variant::Nbvae;
    if (s == "nbvae_dm") return Variant::NbvaeDm;
    if (s == "nbvae_b") return Variant::NbvaeB;
    if (s == "nbvae_c") return Variant::NbvaeC;
    if (s == "multivae") return Variant::Multivae;
    throw ContractError("unknown model variant '" + s + "'");
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::Nbvae: return "nbvae";
        case Variant::NbvaeDm: return "nbvae_dm";
        case Variant::NbvaeB: return "nbvae_b";
        case Variant::NbvaeC: return "nbvae_c";
        case Variant::Multivae: return "multivae";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (input_dim == 0) throw ContractError("ModelConfig: input_dim must be >= 1");
    if (latent_dim == 0) throw ContractError("ModelConfig: latent_dim must be >= 1");
    for (std::size_t w : encoder_layers)
        if (w == 0) throw ContractError("ModelConfig: encoder layer widths must be >= 1");
    for (std::size_t w : decoder_layers)
        if (w == 0) throw ContractError("ModelConfig: decoder layer widths must be >= 1");
    if (variant == Variant::NbvaeC) {
        if (feature_dim == 0) throw ContractError("ModelConfig: nbvae_c requires feature_dim >= 1");
    } else if (feature_dim != 0) {
        throw ContractError("ModelConfig: feature_dim is only valid for variant nbvae_c");
    }
}

namespace {

Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, RandomStream& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    return w;
}

AffineParams make_affine(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                         std::uint64_t seed, std::uint64_t& layer_counter) {
    RandomStream rng(derive_seed(seed, layer_counter++));
    return AffineParams{diff::Parameter(name + ".weight", xavier_uniform(fan_in, fan_out, rng)),
                        diff::Parameter(name + ".bias", Matrix::Zero(1, fan_out))};
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;

    std::uint64_t counter = 0;
    std::size_t width = config.input_dim;
    for (std::size_t l = 0; l < config.encoder_layers.size(); ++l) {
        p.encoder_trunk.push_back(make_affine("encoder.trunk" + std::to_string(l), width,
                                              config.encoder_layers[l], config.seed, counter));
        width = config.encoder_layers[l];
    }
    p.encoder_mean = make_affine("encoder.mean", width, config.latent_dim, config.seed, counter);
    p.encoder_logvar = make_affine("encoder.logvar", width, config.latent_dim, config.seed, counter);

    width = config.latent_dim;
    for (std::size_t l = 0; l < config.decoder_layers.size(); ++l) {
        p.decoder_trunk.push_back(make_affine("decoder.trunk" + std::to_string(l), width,
                                              config.decoder_layers[l], config.seed, counter));
        width = config.decoder_layers[l];
    }
    p.rate_head = make_affine("decoder.rate", width, config.input_dim, config.seed, counter);
    switch (config.variant) {
        case Variant::Nbvae:
        case Variant::NbvaeB:
        case Variant::NbvaeC:
            p.prob_head = make_affine("decoder.prob", width, config.input_dim, config.seed, counter);
            break;
        case Variant::NbvaeDm:
            p.prob_head = make_affine("decoder.prob", width, 1, config.seed, counter);
            break;
        case Variant::Multivae:
            break;
    }

    if (config.variant == Variant::NbvaeC) {
        width = config.feature_dim;
        for (std::size_t l = 0; l < config.encoder_layers.size(); ++l) {
            p.feature_trunk.push_back(make_affine("feature.trunk" + std::to_string(l), width,
                                                  config.encoder_layers[l], config.seed, counter));
            width = config.encoder_layers[l];
        }
        p.feature_mean = make_affine("feature.mean", width, config.latent_dim, config.seed, counter);
        p.feature_logvar = make_affine("feature.logvar", width, config.latent_dim, config.seed, counter);
    }
    return p;
}

namespace {

template <typename Params, typename Ptr>
std::vector<Ptr> collect_parameters(Params& p) {
    std::vector<Ptr> out;
    auto push = [&out](auto& affine) {
        out.push_back(&affine.weight);
        out.push_back(&affine.bias);
    };
    for (auto& a : p.encoder_trunk) push(a);
    push(p.encoder_mean);
    push(p.encoder_logvar);
    for (auto& a : p.decoder_trunk) push(a);
    push(p.rate_head);
    if (p.prob_head) push(*p.prob_head);
    for (auto& a : p.feature_trunk) push(a);
    if (p.feature_mean) push(*p.feature_mean);
    if (p.feature_logvar) push(*p.feature_logvar);
    return out;
}

}  // namespace

std::vector<diff::Parameter*> ModelParams::parameters() {
    return collect_parameters<ModelParams, diff::Parameter*>(*this);
}

std::vector<const diff::Parameter*> ModelParams::parameters() const {
    return collect_parameters<const ModelParams, const diff::Parameter*>(*this);
}

void ModelParams::zero_grads() {
    for (diff::Parameter* p : parameters()) p->zero_grad();
}

ModelParams ModelParams::clone() const { return *this; }

Batch make_batch(const SparseCountMatrix& m, std::span<const std::size_t> rows,
                 const FeatureMatrix* features) {
    Batch b;
    b.counts = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.n_cols()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (const auto& e : m.row(rows[i])) b.counts(static_cast<Eigen::Index>(i), e.col) = e.count;
    if (features) {
        if (features->n_rows != m.n_rows())
            throw DimensionError("make_batch: feature matrix row count differs from target matrix");
        b.features = Matrix::Zero(static_cast<Eigen::Index>(rows.size()),
                                  static_cast<Eigen::Index>(features->n_dims));
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (const auto& [d, v] : features->rows[rows[i]]) b.features(static_cast<Eigen::Index>(i), d) = v;
    }
    return b;
}

Batch make_batch(const BinaryMatrix& m, std::span<const std::size_t> rows, const FeatureMatrix* features) {
    return make_batch(m.counts(), rows, features);
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

namespace {

struct GaussianNodes {
    Node* mean = nullptr;
    Node* logvar = nullptr;
    Node* var = nullptr;
};

struct DecoderNodes {
    Node* rate = nullptr;
    Node* prob = nullptr;
    Node* logits = nullptr;
};

Node* affine_layer(Tape& t, Node* x, AffineParams& a) {
    return t.affine(x, t.leaf(a.weight), t.leaf(a.bias));
}

GaussianNodes gaussian_tower(Tape& t, Node* input, std::vector<AffineParams>& trunk,
                             AffineParams& mean_head, AffineParams& logvar_head) {
    Node* h = input;
    for (auto& layer : trunk) h = t.tanh(affine_layer(t, h, layer));
    GaussianNodes g;
    g.mean = affine_layer(t, h, mean_head);
    g.logvar = t.clamp(affine_layer(t, h, logvar_head), -diff::kLogVarClamp, diff::kLogVarClamp);
    g.var = t.exp(g.logvar);
    return g;
}

GaussianNodes encoder_nodes(Tape& t, ModelParams& p, const Matrix& counts) {
    Matrix transformed = counts.array().log1p();
    Node* input = t.constant(std::move(transformed), "encoder_input");
    return gaussian_tower(t, input, p.encoder_trunk, p.encoder_mean, p.encoder_logvar);
}

GaussianNodes feature_encoder_nodes(Tape& t, ModelParams& p, const Matrix& features) {
    Node* input = t.constant(features, "feature_input");
    return gaussian_tower(t, input, p.feature_trunk, *p.feature_mean, *p.feature_logvar);
}

DecoderNodes decoder_nodes(Tape& t, ModelParams& p, Node* z) {
    Node* h = z;
    for (auto& layer : p.decoder_trunk) h = t.tanh(affine_layer(t, h, layer));
    DecoderNodes d;
    if (p.config.variant == Variant::Multivae) {
        d.logits = affine_layer(t, h, p.rate_head);
    } else {
        d.rate = t.exp(affine_layer(t, h, p.rate_head));
        d.prob = t.sigmoid(affine_layer(t, h, *p.prob_head));
    }
    return d;
}

// Per-row constant sum_v lgamma(y_vj + 1).
Matrix lgamma_count_constant(const Matrix& counts) {
    Matrix out(counts.rows(), 1);
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index v = 0; v < counts.cols(); ++v) acc += lgamma_lanczos(counts(i, v) + 1.0);
        out(i, 0) = acc;
    }
    return out;
}

Node* likelihood_rows(Tape& t, Variant variant, const DecoderNodes& d, const Matrix& counts) {
    Node* y = t.constant(counts, "y");
    switch (variant) {
        case Variant::Nbvae: {
            Node* gamma_terms = t.sub(t.lgamma(t.add(y, d.rate)), t.lgamma(d.rate));
            Node* y_log_p = t.mul(y, t.log(d.prob));
            Node* r_log_1mp = t.mul(d.rate, t.log(t.rsub_scalar(1.0, d.prob)));
            Node* rows = t.sum_cols(t.add(gamma_terms, t.add(y_log_p, r_log_1mp)));
            return t.sub(rows, t.constant(lgamma_count_constant(counts), "lgamma(y+1)"));
        }
        case Variant::NbvaeDm: {
            Node* r_dot = t.sum_cols(d.rate);
            Node* gamma_terms = t.sum_cols(t.sub(t.lgamma(t.add(y, d.rate)), t.lgamma(d.rate)));
            Matrix totals = counts.rowwise().sum();
            Node* head = t.sub(t.lgamma(r_dot), t.lgamma(t.add(r_dot, t.constant(totals, "row_totals"))));
            Matrix cst(counts.rows(), 1);
            for (Eigen::Index i = 0; i < counts.rows(); ++i) cst(i, 0) = lgamma_lanczos(totals(i, 0) + 1.0);
            cst -= lgamma_count_constant(counts);
            return t.add(t.add(gamma_terms, head), t.constant(std::move(cst), "count_coeff"));
        }
        case Variant::NbvaeB:
        case Variant::NbvaeC: {
            Node* q = t.mul(d.rate, t.log(t.rsub_scalar(1.0, d.prob)));  // log (1-p)^r, < 0
            Node* hit = t.mul(y, t.log1mexp(q));
            Node* miss = t.mul(t.rsub_scalar(1.0, y), q);
            return t.sum_cols(t.add(hit, miss));
        }
        case Variant::Multivae: {
            return t.sum_cols(t.mul(y, t.log_softmax_rows(d.logits)));
        }
    }
    throw ContractError("likelihood_rows: unknown variant");
}

Node* kl_standard_rows(Tape& t, const GaussianNodes& q) {
    Node* terms = t.sub(t.add(t.square(q.mean), q.var), t.add_scalar(q.logvar, 1.0));
    return t.mul_scalar(t.sum_cols(terms), 0.5);
}

Node* kl_general_rows(Tape& t, const GaussianNodes& q, const GaussianNodes& p) {
    Node* dmean = t.sub(q.mean, p.mean);
    Node* ratio = t.div(t.add(t.square(dmean), q.var), p.var);
    Node* terms = t.add(t.sub(p.logvar, q.logvar), t.add_scalar(ratio, -1.0));
    return t.mul_scalar(t.sum_cols(terms), 0.5);
}

void check_modality(const ModelConfig& config, const Batch& batch) {
    if (static_cast<std::size_t>(batch.counts.cols()) != config.input_dim)
        throw DimensionError("elbo: batch has " + std::to_string(batch.counts.cols()) +
                             " columns, model expects " + std::to_string(config.input_dim));
    if (config.needs_binary_data()) {
        for (Eigen::Index i = 0; i < batch.counts.rows(); ++i)
            for (Eigen::Index v = 0; v < batch.counts.cols(); ++v) {
                const double c = batch.counts(i, v);
                if (c != 0.0 && c != 1.0)
                    throw ContractError(variant_to_string(config.variant) +
                                        " requires binary data; found value " + std::to_string(c));
            }
    }
    if (config.variant == Variant::NbvaeC) {
        if (batch.features.rows() != batch.counts.rows() ||
            static_cast<std::size_t>(batch.features.cols()) != config.feature_dim)
            throw ContractError("nbvae_c batch requires features of shape n x feature_dim");
    }
}

}  // namespace

ElboNodes elbo_graph(Tape& t, ModelParams& params, const Batch& batch, double beta,
                     const Matrix& noise, LatentSource source) {
    params.config.validate();
    check_modality(params.config, batch);
    if (beta < 0.0) throw ContractError("elbo: beta must be >= 0");
    if (noise.rows() != batch.counts.rows() ||
        static_cast<std::size_t>(noise.cols()) != params.config.latent_dim)
        throw DimensionError("elbo: noise must be batch_size x latent_dim");
    if (source == LatentSource::FeaturePrior && params.config.variant != Variant::NbvaeC)
        throw ContractError("elbo: the feature-prior latent source requires variant nbvae_c");

    GaussianNodes q = encoder_nodes(t, params, batch.counts);
    GaussianNodes prior;
    const bool conditional = params.config.variant == Variant::NbvaeC;
    if (conditional) prior = feature_encoder_nodes(t, params, batch.features);

    const GaussianNodes& z_from = (source == LatentSource::FeaturePrior) ? prior : q;
    Node* eps = t.constant(noise, "noise");
    Node* z = t.add(z_from.mean, t.mul(t.sqrt(z_from.var), eps));

    DecoderNodes d = decoder_nodes(t, params, z);
    Node* loglik = likelihood_rows(t, params.config.variant, d, batch.counts);
    Node* kl = conditional ? kl_general_rows(t, q, prior) : kl_standard_rows(t, q);

    Node* objective = t.mean_all(t.sub(loglik, t.mul_scalar(kl, beta)));
    return ElboNodes{objective, t.mean_all(loglik), t.mean_all(kl)};
}

Node* elbo(Tape& t, ModelParams& params, const Batch& batch, double beta, const Matrix& noise,
           LatentSource source) {
    return elbo_graph(t, params, batch, beta, noise, source).elbo;
}

// ---------------------------------------------------------------------------
// Plain forward paths (evaluation; const params, no tape)
// ---------------------------------------------------------------------------

namespace {

Eigen::RowVectorXd apply_affine(const Eigen::RowVectorXd& x, const AffineParams& a) {
    return x * a.weight.value + a.bias.value.row(0);
}

LatentGaussian gaussian_forward(Eigen::RowVectorXd h, const std::vector<AffineParams>& trunk,
                                const AffineParams& mean_head, const AffineParams& logvar_head) {
    for (const auto& layer : trunk) h = apply_affine(h, layer).array().tanh();
    Eigen::RowVectorXd mean = apply_affine(h, mean_head);
    Eigen::RowVectorXd logvar = apply_affine(h, logvar_head)
                                    .array()
                                    .max(-diff::kLogVarClamp)
                                    .min(diff::kLogVarClamp);
    LatentGaussian g;
    g.mean = mean.transpose();
    g.variance = logvar.array().exp().transpose();
    return g;
}

}  // namespace

LatentGaussian encode(const ModelParams& params, std::span<const double> y) {
    if (y.size() != params.config.input_dim)
        throw DimensionError("encode: input length " + std::to_string(y.size()) + ", expected " +
                             std::to_string(params.config.input_dim));
    Eigen::RowVectorXd h(y.size());
    for (std::size_t v = 0; v < y.size(); ++v) h(static_cast<Eigen::Index>(v)) = std::log1p(y[v]);
    return gaussian_forward(std::move(h), params.encoder_trunk, params.encoder_mean, params.encoder_logvar);
}

LatentGaussian feature_encode(const ModelParams& params, std::span<const double> x) {
    if (params.config.variant != Variant::NbvaeC)
        throw ContractError("feature_encode: only variant nbvae_c has a feature encoder");
    if (x.size() != params.config.feature_dim)
        throw DimensionError("feature_encode: input length " + std::to_string(x.size()) + ", expected " +
                             std::to_string(params.config.feature_dim));
    Eigen::RowVectorXd h = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return gaussian_forward(std::move(h), params.feature_trunk, *params.feature_mean, *params.feature_logvar);
}

LikelihoodParams decode(const ModelParams& params, std::span<const double> z) {
    if (z.size() != params.config.latent_dim)
        throw DimensionError("decode: latent length " + std::to_string(z.size()) + ", expected " +
                             std::to_string(params.config.latent_dim));
    Eigen::RowVectorXd h = Eigen::Map<const Eigen::RowVectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    for (const auto& layer : params.decoder_trunk) h = apply_affine(h, layer).array().tanh();

    LikelihoodParams out;
    if (params.config.variant == Variant::Multivae) {
        out.logits = apply_affine(h, params.rate_head).transpose();
    } else {
        out.rate = apply_affine(h, params.rate_head)
                       .array()
                       .min(diff::kExpInputClamp)
                       .exp()
                       .transpose();
        out.prob = apply_affine(h, *params.prob_head)
                       .unaryExpr([](double t) {
                           return std::clamp(sigmoid_stable(t), diff::kProbClampLo, diff::kProbClampHi);
                       })
                       .transpose();
    }
    return out;
}

}  // namespace nbvae
