#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nbvae/models.hpp"

namespace nbvae {

struct TrainConfig {
    std::size_t batch_size = 100;
    std::size_t max_epochs = 50;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t anneal_steps = 10000;
    double beta_max = 1.0;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    // nbvae_c only: draw z from the feature-encoder prior every
    // `alternate_period` gradient steps (2 = every other step, 0 = never).
    std::size_t alternate_period = 2;

    void validate() const;
};

/// One CSV row of the metric history. validation_metric is NaN except on
/// the closing step of each epoch.
struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double elbo = 0.0;
    double kl = 0.0;
    double beta = 0.0;
    double validation_metric = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
    std::size_t epoch = 0;
    std::size_t global_step = 0;
    double best_validation_metric = -std::numeric_limits<double>::infinity();
    ModelParams params;
    bool aborted = false;
    std::string abort_reason;
};

struct TrainResult {
    TrainState state;
    std::vector<StepRecord> history;
};

/// Bundles the target matrix (counts or binary) with optional features.
/// Exactly one of counts/binary must be set; features are required for
/// nbvae_c.
struct TrainingData {
    const SparseCountMatrix* counts = nullptr;
    const BinaryMatrix* binary = nullptr;
    const FeatureMatrix* features = nullptr;

    std::size_t n_rows() const;
    const SparseCountMatrix& target() const;
};

struct TrainOptions {
    std::optional<ModelParams> initial_params;
    std::function<void(const StepRecord&)> on_step;
};

/// KL annealing weight: min(beta_max, global_step / anneal_steps).
double kl_beta(std::size_t global_step, std::size_t anneal_steps, double beta_max);

/// The early-stopping metric, higher is better. Text data: mean ELBO at
/// beta = 1 under a fixed seeded noise draw; binary: NDCG@10 under the
/// fold-in protocol; multi-label: Precision@1.
double validation_metric(ModelParams& params, const TrainingData& validation, std::uint64_t seed,
                         std::size_t batch_size);

/// One bias-corrected Adam update over the parameter set. Validates every
/// gradient first and applies nothing if any is non-finite (the thrown
/// ContractError names the offending parameter). step_index is 1-based.
void adam_step(std::span<diff::Parameter* const> params, double lr, double beta1, double beta2,
               double eps, std::size_t step_index);

/// Full optimization loop: seeded minibatches, KL annealing, the nbvae_c
/// alternating-prior heuristic, per-epoch validation with patience-based
/// early stopping. The returned state always carries the best-validation
/// parameters. A non-finite ELBO or gradient aborts with the last-good
/// parameters retained and state.aborted set.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainingData& data, const TrainingData& validation,
                  const TrainOptions& options = {});

void write_history_csv(const std::filesystem::path& path, std::span<const StepRecord> history);

}  // namespace nbvae
