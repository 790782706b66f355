#include "nbvae/training.hpp"

#include <cassert>
#include <cmath>
#include <fstream>

#include "nbvae/evaluation.hpp"

namespace nbvae {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ContractError("TrainConfig: adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ContractError("TrainConfig: adam_beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ContractError("TrainConfig: adam_eps must be positive");
    if (anneal_steps == 0) throw ContractError("TrainConfig: anneal_steps must be >= 1");
    if (!(beta_max >= 0.0 && beta_max <= 1.0)) throw ContractError("TrainConfig: beta_max must lie in [0, 1]");
}

std::size_t TrainingData::n_rows() const { return target().n_rows(); }

const SparseCountMatrix& TrainingData::target() const {
    if (counts && binary) throw ContractError("TrainingData: set either counts or binary, not both");
    if (counts) return *counts;
    if (binary) return binary->counts();
    throw ContractError("TrainingData: no target matrix set");
}

double kl_beta(std::size_t global_step, std::size_t anneal_steps, double beta_max) {
    if (anneal_steps == 0) throw ContractError("kl_beta: anneal_steps must be >= 1");
    const double ramp = static_cast<double>(global_step) / static_cast<double>(anneal_steps);
    return std::min(beta_max, ramp);
}

void adam_step(std::span<diff::Parameter* const> params, double lr, double beta1, double beta2,
               double eps, std::size_t step_index) {
    for (const diff::Parameter* p : params) {
        if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
            throw DimensionError("adam_step: gradient shape mismatch for parameter '" + p->name + "'");
        if (!p->grad.allFinite())
            throw ContractError("adam_step: non-finite gradient for parameter '" + p->name + "'");
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_index));
    for (diff::Parameter* p : params) {
        p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
        p->adam_v = beta2 * p->adam_v.array() + (1.0 - beta2) * p->grad.array().square();
        p->value.array() -=
            lr * (p->adam_m.array() / bc1) / ((p->adam_v.array() / bc2).sqrt() + eps);
        assert(p->value.allFinite());
    }
}

namespace {

void check_variant_data(const ModelConfig& mc, const TrainingData& d) {
    const SparseCountMatrix& target = d.target();
    if (target.n_cols() != mc.input_dim)
        throw DimensionError("train: data has " + std::to_string(target.n_cols()) +
                             " columns, model expects " + std::to_string(mc.input_dim));
    if (mc.needs_binary_data() && !target.all_counts_one())
        throw ContractError("train: variant " + variant_to_string(mc.variant) + " requires binary data");
    if (mc.variant == Variant::NbvaeC) {
        if (!d.features) throw ContractError("train: nbvae_c requires feature vectors");
        if (d.features->n_dims != mc.feature_dim)
            throw DimensionError("train: features have " + std::to_string(d.features->n_dims) +
                                 " dims, model expects " + std::to_string(mc.feature_dim));
        if (d.features->n_rows != target.n_rows())
            throw DimensionError("train: feature/target row counts disagree");
    } else if (d.features) {
        throw ContractError("train: variant " + variant_to_string(mc.variant) + " takes no features");
    }
}

diff::Matrix draw_noise(RandomStream& rng, Eigen::Index rows, Eigen::Index cols) {
    diff::Matrix noise(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index k = 0; k < cols; ++k) noise(i, k) = rng.normal();
    return noise;
}

}  // namespace

double validation_metric(ModelParams& params, const TrainingData& val, std::uint64_t seed,
                         std::size_t batch_size) {
    const ModelConfig& mc = params.config;
    if (mc.variant == Variant::NbvaeC) {
        const std::size_t r1[] = {1};
        return evaluate_multilabel(params, *val.features, *val.binary, r1).metrics.at("precision@1");
    }
    if (val.binary) {
        const std::size_t r10[] = {10};
        return evaluate_ranking(params, *val.binary, 0.8, derive_seed(seed, 0xfb1d), r10)
            .metrics.at("ndcg@10");
    }
    const SparseCountMatrix& m = val.target();
    RandomStream noise_rng(derive_seed(seed, 0x7a11d));
    double weighted = 0.0;
    std::size_t n = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < m.n_rows(); start += batch_size) {
        rows.clear();
        for (std::size_t j = start; j < std::min(m.n_rows(), start + batch_size); ++j) rows.push_back(j);
        Batch b = make_batch(m, rows);
        diff::Matrix noise = draw_noise(noise_rng, b.size(), static_cast<Eigen::Index>(mc.latent_dim));
        diff::Tape tape;
        ElboNodes nodes = elbo_graph(tape, params, b, 1.0, noise);
        weighted += nodes.elbo->scalar() * static_cast<double>(rows.size());
        n += rows.size();
    }
    return weighted / static_cast<double>(n);
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainingData& data, const TrainingData& validation,
                  const TrainOptions& options) {
    model_config.validate();
    train_config.validate();
    check_variant_data(model_config, data);
    check_variant_data(model_config, validation);

    TrainResult result;
    result.state.params =
        options.initial_params ? options.initial_params->clone() : ModelParams::init(model_config);
    ModelParams& params = result.state.params;
    if (options.initial_params) {
        params.config.validate();
        if (params.config.input_dim != model_config.input_dim ||
            params.config.variant != model_config.variant)
            throw ContractError("train: initial params disagree with the model config");
    }
    auto param_ptrs = params.parameters();

    ModelParams best = params.clone();
    ModelParams last_good = params.clone();
    double best_metric = -std::numeric_limits<double>::infinity();
    std::size_t epochs_since_best = 0;

    const SparseCountMatrix& target = data.target();
    RandomStream noise_rng(derive_seed(train_config.seed, 0x6e6f69));

    bool stopped = false;
    for (std::size_t epoch = 1; epoch <= train_config.max_epochs && !stopped; ++epoch) {
        result.state.epoch = epoch;
        const auto batches = minibatch_indices(target.n_rows(), train_config.batch_size,
                                               derive_seed(train_config.seed, epoch));
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const double beta =
                kl_beta(result.state.global_step, train_config.anneal_steps, train_config.beta_max);
            Batch batch = make_batch(target, batches[bi], data.features);
            diff::Matrix noise =
                draw_noise(noise_rng, batch.size(), static_cast<Eigen::Index>(model_config.latent_dim));

            // Every alternate_period-th step draws z from the feature prior;
            // with the default period 2 these are the odd-numbered steps.
            LatentSource source = LatentSource::Posterior;
            if (model_config.variant == Variant::NbvaeC && train_config.alternate_period > 0 &&
                result.state.global_step % train_config.alternate_period ==
                    train_config.alternate_period - 1)
                source = LatentSource::FeaturePrior;

            double elbo_value = std::numeric_limits<double>::quiet_NaN();
            double kl_value = std::numeric_limits<double>::quiet_NaN();
            std::string failure;
            try {
                diff::Tape tape;
                params.zero_grads();
                ElboNodes nodes = elbo_graph(tape, params, batch, beta, noise, source);
                elbo_value = nodes.elbo->scalar();
                kl_value = nodes.mean_kl->scalar();
                if (!std::isfinite(elbo_value)) {
                    failure = "non-finite ELBO at step " + std::to_string(result.state.global_step);
                } else {
                    last_good = params.clone();
                    tape.backward(tape.neg(nodes.elbo));
                    adam_step(param_ptrs, train_config.learning_rate, train_config.adam_beta1,
                              train_config.adam_beta2, train_config.adam_eps,
                              result.state.global_step + 1);
                }
            } catch (const NumericDomainError& e) {
                // a NaN/negative value reached a domain-checked op: same
                // abort semantics as a non-finite ELBO
                failure = "non-finite ELBO at step " + std::to_string(result.state.global_step) +
                          " (" + e.what() + ")";
            } catch (const ContractError& e) {
                failure = e.what();  // adam: non-finite gradient
            }
            if (!failure.empty()) {
                result.state.params = last_good.clone();
                result.state.aborted = true;
                result.state.abort_reason = failure;
                return result;
            }

            StepRecord rec;
            rec.step = result.state.global_step;
            rec.epoch = epoch;
            rec.elbo = elbo_value;
            rec.kl = kl_value;
            rec.beta = beta;
            if (bi + 1 == batches.size()) {
                rec.validation_metric =
                    validation_metric(params, validation, train_config.seed, train_config.batch_size);
                if (rec.validation_metric > best_metric) {
                    best_metric = rec.validation_metric;
                    best = params.clone();
                    epochs_since_best = 0;
                } else {
                    ++epochs_since_best;
                    if (epochs_since_best >= train_config.patience) stopped = true;
                }
            }
            result.history.push_back(rec);
            if (options.on_step) options.on_step(rec);
            ++result.state.global_step;
        }
    }

    if (best_metric > -std::numeric_limits<double>::infinity()) {
        result.state.params = best.clone();
        result.state.best_validation_metric = best_metric;
    }
    return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const StepRecord> history) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    out << "step,epoch,elbo,kl,beta,validation_metric\n";
    char buf[160];
    for (const StepRecord& r : history) {
        if (std::isnan(r.validation_metric)) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,\n", r.step, r.epoch, r.elbo,
                          r.kl, r.beta);
        } else {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", r.step, r.epoch,
                          r.elbo, r.kl, r.beta, r.validation_metric);
        }
        out << buf;
    }
    if (!out) throw LoadError("write failed for " + path.string());
}

}  // namespace nbvae
