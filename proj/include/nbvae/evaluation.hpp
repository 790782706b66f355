#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nbvae/models.hpp"

namespace nbvae {

/// Unnormalized per-dimension intensity and its normalization over the
/// vocabulary/item set.
struct PredictiveRate {
    Eigen::VectorXd rates;       // strictly positive
    Eigen::VectorXd normalized;  // sums to 1
};

/// Table-of-models predictive rate for the trainable variants:
///   multivae:  l'_v ∝ softmax(logits)_v
///   nbvae:     l'_v ∝ (y~_v + r_v) p_v
///   nbvae_dm:  l'_v ∝ y~_v + r_v
/// where y~ are the observed counts (pass zeros for none). nbvae_b/nbvae_c
/// score labels instead and are a contract error here.
PredictiveRate predictive_rate(Variant variant, const LikelihoodParams& params,
                               std::span<const double> observed_counts);

/// Diagnostic-only rate formulas over externally supplied factor matrices;
/// never trained here.
PredictiveRate predictive_rate_pfa(const Eigen::MatrixXd& phi, const Eigen::VectorXd& theta);
PredictiveRate predictive_rate_lda(const Eigen::MatrixXd& phi, const Eigen::VectorXd& theta);
PredictiveRate predictive_rate_nbfa(const Eigen::MatrixXd& phi, const Eigen::VectorXd& theta,
                                    double p, std::span<const double> observed_counts);

/// Per-heldout-word perplexity of a fixed (observed, heldout) pair:
///   exp( - sum_j sum_v h_vj log s_vj / sum_j h_.j )
/// with s_j the normalized predictive rate at z* = encoder mean of the
/// observed part. Rows with an empty heldout part are skipped; if all rows
/// are empty this is an evaluation error.
double perplexity_from_split(const ModelParams& params, const SparseCountMatrix& observed,
                             const SparseCountMatrix& heldout, int threads = 1);

/// Splits each test row at `split_fraction` with the seeded token-level
/// splitter, then scores as above.
double perplexity(const ModelParams& params, const SparseCountMatrix& test, double split_fraction,
                  std::uint64_t seed, int threads = 1);

struct RankMetricValues {
    std::vector<double> recall;  // aligned with the R values passed in
    std::vector<double> ndcg;
};

/// Ranks items by score (ties broken by ascending index), drops the items
/// flagged in `exclude` (the fold-in items), and reports
///   Recall@R = hits(R) / min(R, |heldout|)
///   NDCG@R   = DCG@R / ideal DCG@R,  DCG gain 1/log2(rank+1).
/// heldout must be non-empty and disjoint from exclude.
RankMetricValues rank_metrics(std::span<const double> scores, std::span<const std::uint8_t> heldout,
                              std::span<const std::uint8_t> exclude,
                              std::span<const std::size_t> r_values);

/// Fraction of the top-R scored labels that are true, per R.
std::vector<double> precision_at_r(std::span<const double> scores,
                                   std::span<const std::uint8_t> true_labels,
                                   std::span<const std::size_t> r_values);

/// Label scores for one sample (variant nbvae_c): z* = feature-encoder
/// mean, score_v = 1 - (1 - p_v)^{r_v}.
Eigen::VectorXd score_labels(const ModelParams& params, std::span<const double> x);

/// Named metric values with run identity. wall_clock_seconds is printed in
/// the metric table but intentionally left out of the canonical JSON so
/// identical runs serialize identically.
struct EvalReport {
    std::map<std::string, double> metrics;
    std::vector<std::size_t> r_values;
    std::string dataset_id;
    std::string checkpoint_id;
    double wall_clock_seconds = 0.0;

    void validate() const;
};

/// Fold-in ranking evaluation: per user, `fold_fraction` of the items are
/// shown to the encoder and the rest are targets; mean Recall@R / NDCG@R
/// over users with a non-empty target set.
EvalReport evaluate_ranking(const ModelParams& params, const BinaryMatrix& test, double fold_fraction,
                            std::uint64_t seed, std::span<const std::size_t> r_values, int threads = 1);

/// Mean Precision@R over samples; scores from the feature encoder
/// (nbvae_c) or from z* = 0 (nbvae_b, the ablated prior).
EvalReport evaluate_multilabel(const ModelParams& params, const FeatureMatrix& features,
                               const BinaryMatrix& labels, std::span<const std::size_t> r_values,
                               int threads = 1);

EvalReport evaluate_perplexity(const ModelParams& params, const SparseCountMatrix& test,
                               double split_fraction, std::uint64_t seed, int threads = 1);

void write_report_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_json(const std::filesystem::path& path);
std::string report_table(const EvalReport& report);

std::string dataset_digest(const SparseCountMatrix& m, const std::string& label);

}  // namespace nbvae
