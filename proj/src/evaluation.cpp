#include "nbvae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nbvae/checkpoint.hpp"

namespace nbvae {

namespace {

PredictiveRate normalize_rates(Eigen::VectorXd rates) {
    for (Eigen::Index v = 0; v < rates.size(); ++v)
        if (!(rates[v] > 0.0))
            throw NumericDomainError("predictive rate must be strictly positive at index " + std::to_string(v));
    PredictiveRate out;
    out.normalized = rates / rates.sum();
    out.rates = std::move(rates);
    return out;
}

// Runs fn(row) over [0, n) on `threads` workers; results land in
// caller-owned slots so the final reduction is a fixed-order sweep.
void parallel_rows(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, threads);
    if (workers == 1 || n < 2) {
        for (std::size_t j = 0; j < n; ++j) fn(j);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        std::size_t lo = static_cast<std::size_t>(w) * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t j = lo; j < hi; ++j) fn(j);
        });
    }
    for (auto& t : pool) t.join();
}

std::vector<std::size_t> ranked_indices(std::span<const double> scores,
                                        std::span<const std::uint8_t> exclude) {
    std::vector<std::size_t> order;
    order.reserve(scores.size());
    for (std::size_t v = 0; v < scores.size(); ++v)
        if (exclude.empty() || !exclude[v]) order.push_back(v);
    // descending score, ties by ascending index
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace

PredictiveRate predictive_rate(Variant variant, const LikelihoodParams& params,
                               std::span<const double> observed_counts) {
    switch (variant) {
        case Variant::Multivae: {
            if (params.logits.size() == 0) throw ContractError("predictive_rate: multivae params carry no logits");
            const double m = params.logits.maxCoeff();
            Eigen::VectorXd rates = (params.logits.array() - m).exp();
            return normalize_rates(std::move(rates));
        }
        case Variant::Nbvae: {
            if (static_cast<std::size_t>(params.rate.size()) != observed_counts.size() ||
                params.prob.size() != params.rate.size())
                throw DimensionError("predictive_rate: rate/prob/observed lengths disagree");
            Eigen::VectorXd rates(params.rate.size());
            for (Eigen::Index v = 0; v < rates.size(); ++v)
                rates[v] = (observed_counts[static_cast<std::size_t>(v)] + params.rate[v]) * params.prob[v];
            return normalize_rates(std::move(rates));
        }
        case Variant::NbvaeDm: {
            if (static_cast<std::size_t>(params.rate.size()) != observed_counts.size())
                throw DimensionError("predictive_rate: rate/observed lengths disagree");
            Eigen::VectorXd rates(params.rate.size());
            for (Eigen::Index v = 0; v < rates.size(); ++v)
                rates[v] = observed_counts[static_cast<std::size_t>(v)] + params.rate[v];
            return normalize_rates(std::move(rates));
        }
        case Variant::NbvaeB:
        case Variant::NbvaeC:
            throw ContractError("predictive_rate: " + variant_to_string(variant) +
                                " scores labels/items via the Bernoulli link, not a word rate");
    }
    throw ContractError("predictive_rate: unknown variant");
}

PredictiveRate predictive_rate_pfa(const Eigen::MatrixXd& phi, const Eigen::VectorXd& theta) {
    if (phi.cols() != theta.size()) throw DimensionError("predictive_rate_pfa: Phi/theta shapes disagree");
    return normalize_rates(phi * theta);
}

PredictiveRate predictive_rate_lda(const Eigen::MatrixXd& phi, const Eigen::VectorXd& theta) {
    if (phi.cols() != theta.size()) throw DimensionError("predictive_rate_lda: Phi/theta shapes disagree");
    return normalize_rates(phi * theta / theta.sum());
}

PredictiveRate predictive_rate_nbfa(const Eigen::MatrixXd& phi, const Eigen::VectorXd& theta,
                                    double p, std::span<const double> observed_counts) {
    if (phi.cols() != theta.size()) throw DimensionError("predictive_rate_nbfa: Phi/theta shapes disagree");
    if (static_cast<std::size_t>(phi.rows()) != observed_counts.size())
        throw DimensionError("predictive_rate_nbfa: observed counts length disagrees with Phi");
    Eigen::VectorXd base = phi * theta;
    Eigen::VectorXd rates(base.size());
    for (Eigen::Index v = 0; v < base.size(); ++v)
        rates[v] = (observed_counts[static_cast<std::size_t>(v)] + base[v]) * p;
    return normalize_rates(std::move(rates));
}

double perplexity_from_split(const ModelParams& params, const SparseCountMatrix& observed,
                             const SparseCountMatrix& heldout, int threads) {
    if (observed.n_rows() != heldout.n_rows() || observed.n_cols() != heldout.n_cols())
        throw DimensionError("perplexity: observed/heldout shapes disagree");
    if (observed.n_cols() != params.config.input_dim)
        throw DimensionError("perplexity: matrix has " + std::to_string(observed.n_cols()) +
                             " columns, model expects " + std::to_string(params.config.input_dim));
    const Variant variant = params.config.variant;
    if (variant == Variant::NbvaeB || variant == Variant::NbvaeC)
        throw ContractError("perplexity: variant " + variant_to_string(variant) + " has no word rate");

    const std::size_t n = observed.n_rows();
    std::vector<double> log_mass(n, 0.0);
    std::vector<double> token_count(n, 0.0);

    parallel_rows(n, threads, [&](std::size_t j) {
        if (heldout.row_total(j) == 0) return;
        std::vector<double> y_obs(observed.n_cols());
        observed.dense_row(j, y_obs);
        const LatentGaussian q = encode(params, y_obs);
        std::vector<double> z(q.mean.data(), q.mean.data() + q.mean.size());
        const LikelihoodParams lik = decode(params, z);
        const PredictiveRate rate = predictive_rate(variant, lik, y_obs);
        double acc = 0.0;
        for (const auto& e : heldout.row(j)) acc += e.count * std::log(rate.normalized[e.col]);
        log_mass[j] = acc;
        token_count[j] = static_cast<double>(heldout.row_total(j));
    });

    const double tokens = std::accumulate(token_count.begin(), token_count.end(), 0.0);
    if (tokens == 0.0) throw EvalError("perplexity: every row has an empty heldout part");
    const double total = std::accumulate(log_mass.begin(), log_mass.end(), 0.0);
    return std::exp(-total / tokens);
}

double perplexity(const ModelParams& params, const SparseCountMatrix& test, double split_fraction,
                  std::uint64_t seed, int threads) {
    const HeldoutSplit split = split_heldout(test, split_fraction, seed);
    return perplexity_from_split(params, split.observed, split.heldout, threads);
}

RankMetricValues rank_metrics(std::span<const double> scores, std::span<const std::uint8_t> heldout,
                              std::span<const std::uint8_t> exclude,
                              std::span<const std::size_t> r_values) {
    if (heldout.size() != scores.size() || (!exclude.empty() && exclude.size() != scores.size()))
        throw DimensionError("rank_metrics: vector lengths disagree");
    std::size_t n_heldout = 0;
    for (std::size_t v = 0; v < heldout.size(); ++v) {
        if (heldout[v] && !exclude.empty() && exclude[v])
            throw ContractError("rank_metrics: heldout and exclude sets must be disjoint");
        if (heldout[v]) ++n_heldout;
    }
    if (n_heldout == 0) throw ContractError("rank_metrics: heldout set is empty");

    const std::vector<std::size_t> order = ranked_indices(scores, exclude);

    RankMetricValues out;
    for (std::size_t r_val : r_values) {
        const std::size_t depth = std::min(r_val, order.size());
        std::size_t hits = 0;
        double dcg = 0.0;
        for (std::size_t rank = 0; rank < depth; ++rank) {
            if (heldout[order[rank]]) {
                ++hits;
                dcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
            }
        }
        double ideal = 0.0;
        const std::size_t ideal_depth = std::min(r_val, n_heldout);
        for (std::size_t rank = 0; rank < ideal_depth; ++rank)
            ideal += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
        out.recall.push_back(static_cast<double>(hits) / static_cast<double>(std::min(r_val, n_heldout)));
        out.ndcg.push_back(ideal > 0.0 ? dcg / ideal : 0.0);
    }
    return out;
}

std::vector<double> precision_at_r(std::span<const double> scores,
                                   std::span<const std::uint8_t> true_labels,
                                   std::span<const std::size_t> r_values) {
    if (true_labels.size() != scores.size()) throw DimensionError("precision_at_r: vector lengths disagree");
    const std::vector<std::size_t> order = ranked_indices(scores, {});
    std::vector<double> out;
    for (std::size_t r_val : r_values) {
        const std::size_t depth = std::min(r_val, order.size());
        std::size_t hits = 0;
        for (std::size_t rank = 0; rank < depth; ++rank)
            if (true_labels[order[rank]]) ++hits;
        out.push_back(r_val == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(r_val));
    }
    return out;
}

namespace {

Eigen::VectorXd link_scores(const ModelParams& params, std::span<const double> z) {
    const LikelihoodParams lik = decode(params, z);
    Eigen::VectorXd scores(lik.rate.size());
    for (Eigen::Index v = 0; v < scores.size(); ++v)
        scores[v] = -std::expm1(lik.rate[v] * std::log1p(-lik.prob[v]));  // 1 - (1-p)^r
    return scores;
}

}  // namespace

Eigen::VectorXd score_labels(const ModelParams& params, std::span<const double> x) {
    if (params.config.variant != Variant::NbvaeC)
        throw ContractError("score_labels: only variant nbvae_c scores labels from features");
    const LatentGaussian prior = feature_encode(params, x);
    std::vector<double> z(prior.mean.data(), prior.mean.data() + prior.mean.size());
    return link_scores(params, z);
}

void EvalReport::validate() const {
    for (const auto& [name, value] : metrics)
        if (!std::isfinite(value)) throw EvalError("EvalReport: metric '" + name + "' is not finite");
}

EvalReport evaluate_ranking(const ModelParams& params, const BinaryMatrix& test, double fold_fraction,
                            std::uint64_t seed, std::span<const std::size_t> r_values, int threads) {
    if (!(fold_fraction > 0.0 && fold_fraction < 1.0))
        throw ContractError("evaluate_ranking: fold_fraction must lie in (0, 1)");
    const Variant variant = params.config.variant;
    const std::size_t n = test.n_rows();
    const std::size_t n_items = test.n_cols();
    // fold_fraction is the observed share; the splitter's fraction is the
    // heldout share.
    const HeldoutSplit split = split_heldout(test.counts(), 1.0 - fold_fraction, seed);

    std::vector<std::vector<double>> recall(n), ndcg(n);
    std::vector<std::uint8_t> scored(n, 0);

    parallel_rows(n, threads, [&](std::size_t j) {
        if (split.heldout.row_total(j) == 0) return;
        std::vector<double> y_obs(n_items);
        split.observed.dense_row(j, y_obs);

        const LatentGaussian q = encode(params, y_obs);
        std::vector<double> z(q.mean.data(), q.mean.data() + q.mean.size());

        Eigen::VectorXd scores;
        switch (variant) {
            case Variant::NbvaeB:
            case Variant::NbvaeC:
                scores = link_scores(params, z);
                break;
            case Variant::Multivae:
                // softmax is monotone in the logits; ranking needs no normalization
                scores = decode(params, z).logits;
                break;
            case Variant::Nbvae:
            case Variant::NbvaeDm: {
                const LikelihoodParams lik = decode(params, z);
                scores = predictive_rate(variant, lik, y_obs).normalized;
                break;
            }
        }

        std::vector<std::uint8_t> heldout(n_items, 0), exclude(n_items, 0);
        for (const auto& e : split.heldout.row(j)) heldout[e.col] = 1;
        for (const auto& e : split.observed.row(j)) exclude[e.col] = 1;

        const RankMetricValues m =
            rank_metrics({scores.data(), static_cast<std::size_t>(scores.size())}, heldout, exclude, r_values);
        recall[j] = m.recall;
        ndcg[j] = m.ndcg;
        scored[j] = 1;
    });

    std::size_t n_scored = 0;
    std::vector<double> recall_sum(r_values.size(), 0.0), ndcg_sum(r_values.size(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (!scored[j]) continue;
        ++n_scored;
        for (std::size_t k = 0; k < r_values.size(); ++k) {
            recall_sum[k] += recall[j][k];
            ndcg_sum[k] += ndcg[j][k];
        }
    }
    if (n_scored == 0) throw EvalError("evaluate_ranking: every row has an empty target set");

    EvalReport report;
    report.r_values.assign(r_values.begin(), r_values.end());
    for (std::size_t k = 0; k < r_values.size(); ++k) {
        report.metrics["recall@" + std::to_string(r_values[k])] = recall_sum[k] / static_cast<double>(n_scored);
        report.metrics["ndcg@" + std::to_string(r_values[k])] = ndcg_sum[k] / static_cast<double>(n_scored);
    }
    report.dataset_id = dataset_digest(test.counts(), "binary");
    report.checkpoint_id = variant_to_string(variant) + ":" + checkpoint_digest(params);
    report.validate();
    return report;
}

EvalReport evaluate_multilabel(const ModelParams& params, const FeatureMatrix& features,
                               const BinaryMatrix& labels, std::span<const std::size_t> r_values,
                               int threads) {
    if (features.n_rows != labels.n_rows())
        throw DimensionError("evaluate_multilabel: feature/label row counts disagree");
    const Variant variant = params.config.variant;
    if (variant != Variant::NbvaeC && variant != Variant::NbvaeB)
        throw ContractError("evaluate_multilabel: variant " + variant_to_string(variant) +
                            " does not score labels");

    const std::size_t n = features.n_rows;
    const std::size_t n_labels = labels.n_cols();
    std::vector<std::vector<double>> precision(n);

    parallel_rows(n, threads, [&](std::size_t j) {
        Eigen::VectorXd scores;
        if (variant == Variant::NbvaeC) {
            std::vector<double> x(features.n_dims);
            features.dense_row(j, x);
            scores = score_labels(params, x);
        } else {
            // ablated prior: z* = 0, the mean of N(0, I)
            std::vector<double> z(params.config.latent_dim, 0.0);
            scores = link_scores(params, z);
        }
        std::vector<std::uint8_t> truth(n_labels, 0);
        for (const auto& e : labels.counts().row(j)) truth[e.col] = 1;
        precision[j] =
            precision_at_r({scores.data(), static_cast<std::size_t>(scores.size())}, truth, r_values);
    });

    std::vector<double> sums(r_values.size(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < r_values.size(); ++k) sums[k] += precision[j][k];

    EvalReport report;
    report.r_values.assign(r_values.begin(), r_values.end());
    for (std::size_t k = 0; k < r_values.size(); ++k)
        report.metrics["precision@" + std::to_string(r_values[k])] = sums[k] / static_cast<double>(n);
    report.dataset_id = dataset_digest(labels.counts(), "labels");
    report.checkpoint_id = variant_to_string(variant) + ":" + checkpoint_digest(params);
    report.validate();
    return report;
}

EvalReport evaluate_perplexity(const ModelParams& params, const SparseCountMatrix& test,
                               double split_fraction, std::uint64_t seed, int threads) {
    EvalReport report;
    report.metrics["perplexity"] = perplexity(params, test, split_fraction, seed, threads);
    report.dataset_id = dataset_digest(test, "bow");
    report.checkpoint_id = variant_to_string(params.config.variant) + ":" + checkpoint_digest(params);
    report.validate();
    return report;
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
    report.validate();
    nlohmann::ordered_json j;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [name, value] : report.metrics) j["metrics"][name] = value;
    j["r_values"] = report.r_values;
    j["dataset"] = report.dataset_id;
    j["checkpoint"] = report.checkpoint_id;
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw LoadError("write failed for " + path.string());
}

EvalReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    EvalReport report;
    for (const auto& [name, value] : j.at("metrics").items()) report.metrics[name] = value.get<double>();
    report.r_values = j.at("r_values").get<std::vector<std::size_t>>();
    report.dataset_id = j.at("dataset").get<std::string>();
    report.checkpoint_id = j.at("checkpoint").get<std::string>();
    return report;
}

std::string report_table(const EvalReport& report) {
    std::ostringstream out;
    out << "metric            value\n";
    out << "----------------  ------------\n";
    for (const auto& [name, value] : report.metrics) {
        out << name;
        for (std::size_t i = name.size(); i < 18; ++i) out << ' ';
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", value);
        out << buf << '\n';
    }
    out << "dataset:    " << report.dataset_id << '\n';
    out << "checkpoint: " << report.checkpoint_id << '\n';
    char buf[48];
    std::snprintf(buf, sizeof(buf), "wall clock: %.3fs\n", report.wall_clock_seconds);
    out << buf;
    return out.str();
}

std::string dataset_digest(const SparseCountMatrix& m, const std::string& label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix64 = [&h](std::uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    mix64(m.n_rows());
    mix64(m.n_cols());
    for (std::size_t j = 0; j < m.n_rows(); ++j)
        for (const auto& e : m.row(j)) {
            mix64(j);
            mix64(e.col);
            mix64(e.count);
        }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s:%zux%zu:%016llx", label.c_str(), m.n_rows(), m.n_cols(),
                  static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace nbvae
