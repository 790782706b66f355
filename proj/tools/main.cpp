#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <vector>

#include <CLI11.hpp>

#include "nbvae/checkpoint.hpp"
#include "nbvae/evaluation.hpp"
#include "nbvae/gradcheck.hpp"
#include "nbvae/models.hpp"
#include "nbvae/training.hpp"
#include "run_config.hpp"

namespace {

using namespace nbvae;
using cli::DataFormat;
using cli::RunConfig;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct LoadedData {
    std::optional<SparseCountMatrix> counts;
    std::optional<BinaryMatrix> binary;
    std::optional<FeatureMatrix> features;

    TrainingData view() const {
        TrainingData d;
        if (counts) d.counts = &*counts;
        if (binary) d.binary = &*binary;
        if (features) d.features = &*features;
        return d;
    }
    std::size_t n_cols() const { return counts ? counts->n_cols() : binary->n_cols(); }
    std::size_t n_rows() const { return counts ? counts->n_rows() : binary->n_rows(); }
};

LoadedData load_split(DataFormat format, const std::filesystem::path& path) {
    LoadedData d;
    switch (format) {
        case DataFormat::Bow:
            d.counts = load_bow(path);
            break;
        case DataFormat::Binary:
            d.binary = load_binary(path);
            break;
        case DataFormat::Multilabel: {
            auto [x, y] = load_multilabel(path);
            d.features = std::move(x);
            d.binary = std::move(y);
            break;
        }
    }
    return d;
}

ModelConfig model_config_from(const RunConfig& cfg, const LoadedData& data) {
    ModelConfig mc;
    mc.variant = variant_from_string(cfg.variant);
    mc.input_dim = data.n_cols();
    mc.latent_dim = cfg.latent_dim;
    mc.encoder_layers = cfg.encoder_layers;
    mc.decoder_layers = cfg.decoder_layers;
    mc.feature_dim = mc.variant == Variant::NbvaeC ? data.features->n_dims : 0;
    mc.seed = cfg.model_seed;
    return mc;
}

EvalReport run_evaluation(const RunConfig& cfg, const ModelParams& params, const LoadedData& data) {
    const auto t0 = std::chrono::steady_clock::now();
    EvalReport report;
    switch (cfg.format) {
        case DataFormat::Bow:
            report = evaluate_perplexity(params, *data.counts, cfg.heldout_fraction, cfg.eval_seed,
                                         cfg.threads);
            break;
        case DataFormat::Binary:
            report = evaluate_ranking(params, *data.binary, cfg.fold_fraction, cfg.eval_seed,
                                      cfg.r_values, cfg.threads);
            break;
        case DataFormat::Multilabel:
            report = evaluate_multilabel(params, *data.features, *data.binary, cfg.r_values,
                                         cfg.threads);
            break;
    }
    // keep only the requested metrics
    std::map<std::string, double> filtered;
    for (const std::string& name : cfg.metrics) {
        auto it = report.metrics.find(name);
        if (it != report.metrics.end()) filtered[name] = it->second;
    }
    report.metrics = std::move(filtered);
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

RunConfig load_config_with_overrides(const std::string& config_path, const std::string& out_dir,
                                     std::optional<std::uint64_t> seed, int threads) {
    RunConfig cfg = RunConfig::load(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed) {
        cfg.model_seed = *seed;
        cfg.train.seed = *seed;
        cfg.eval_seed = *seed;
    }
    if (threads > 0) cfg.threads = threads;
    return cfg;
}

int cmd_train(const RunConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);
    cfg.write_resolved(cfg.output_dir / "config.resolved.json");

    const LoadedData train_data = load_split(cfg.format, cfg.train_path);
    const LoadedData val_data = load_split(cfg.format, cfg.validation_path);

    const ModelConfig mc = model_config_from(cfg, train_data);

    TrainOptions options;
    options.on_step = [](const StepRecord& r) {
        if (!std::isnan(r.validation_metric))
            std::fprintf(stderr, "epoch %zu step %zu elbo %.4f kl %.4f beta %.3f val %.5f\n", r.epoch,
                         r.step, r.elbo, r.kl, r.beta, r.validation_metric);
    };

    TrainResult result = train(mc, cfg.train, train_data.view(), val_data.view(), options);

    save_checkpoint(cfg.output_dir / "checkpoint", result.state.params);
    write_history_csv(cfg.output_dir / "history.csv", result.history);

    if (result.state.aborted) {
        std::cerr << "training aborted: " << result.state.abort_reason
                  << " (last-good checkpoint written)\n";
        return kExitNumeric;
    }

    EvalReport report = run_evaluation(cfg, result.state.params, val_data);
    write_report_json(cfg.output_dir / "validation_report.json", report);
    std::cout << report_table(report);
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint, const std::string& data_override) {
    cfg.validate();
    ModelParams params = load_checkpoint(checkpoint);

    std::filesystem::path data_path = cfg.test_path.empty() ? cfg.validation_path : cfg.test_path;
    if (!data_override.empty()) data_path = data_override;
    if (!std::filesystem::exists(data_path))
        throw cli::ConfigError("data path does not exist: " + data_path.string());

    const LoadedData data = load_split(cfg.format, data_path);
    if (data.n_cols() != params.config.input_dim)
        throw cli::ConfigError("checkpoint expects " + std::to_string(params.config.input_dim) +
                               " columns, data has " + std::to_string(data.n_cols()));
    if (params.config.variant != variant_from_string(cfg.variant))
        throw cli::ConfigError("checkpoint variant " + variant_to_string(params.config.variant) +
                               " does not match configured variant " + cfg.variant);

    EvalReport report = run_evaluation(cfg, params, data);
    std::filesystem::create_directories(cfg.output_dir);
    cfg.write_resolved(cfg.output_dir / "config.resolved.json");
    write_report_json(cfg.output_dir / "eval_report.json", report);
    std::cout << report_table(report);
    return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& data_override,
                std::size_t top) {
    cfg.validate();
    ModelParams params = load_checkpoint(checkpoint);

    std::filesystem::path data_path = cfg.test_path.empty() ? cfg.validation_path : cfg.test_path;
    if (!data_override.empty()) data_path = data_override;
    const LoadedData data = load_split(cfg.format, data_path);
    if (data.n_cols() != params.config.input_dim && cfg.format != DataFormat::Multilabel)
        throw cli::ConfigError("checkpoint expects " + std::to_string(params.config.input_dim) +
                               " columns, data has " + std::to_string(data.n_cols()));

    std::filesystem::create_directories(cfg.output_dir);
    cfg.write_resolved(cfg.output_dir / "config.resolved.json");
    const std::filesystem::path out_path = cfg.output_dir / "predictions.tsv";
    std::ofstream out(out_path);
    if (!out) throw LoadError("cannot write " + out_path.string());
    out << "row\trank\tindex\tscore\n";

    const std::size_t n = data.n_rows();
    const SparseCountMatrix& target = data.counts ? *data.counts : data.binary->counts();
    for (std::size_t j = 0; j < n; ++j) {
        Eigen::VectorXd scores;
        if (params.config.variant == Variant::NbvaeC) {
            std::vector<double> x(data.features->n_dims);
            data.features->dense_row(j, x);
            scores = score_labels(params, x);
        } else {
            std::vector<double> y(target.n_cols());
            target.dense_row(j, y);
            const LatentGaussian q = encode(params, y);
            std::vector<double> z(q.mean.data(), q.mean.data() + q.mean.size());
            const LikelihoodParams lik = decode(params, z);
            if (params.config.variant == Variant::NbvaeB) {
                scores.resize(lik.rate.size());
                for (Eigen::Index v = 0; v < scores.size(); ++v)
                    scores[v] = -std::expm1(lik.rate[v] * std::log1p(-lik.prob[v]));
            } else {
                scores = predictive_rate(params.config.variant, lik, y).normalized;
            }
        }
        std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
        for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
        std::stable_sort(order.begin(), order.end(),
                         [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        const std::size_t depth = top == 0 ? order.size() : std::min(top, order.size());
        char buf[96];
        for (std::size_t rank = 0; rank < depth; ++rank) {
            std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%zu\t%.10g\n", j, rank + 1, order[rank],
                          scores[order[rank]]);
            out << buf;
        }
    }
    std::cout << "wrote " << out_path.string() << "\n";
    return kExitOk;
}

int cmd_prepare(const RunConfig& cfg, const std::string& split_out) {
    cfg.validate();
    auto describe = [&](const char* name, const std::filesystem::path& path) {
        if (path.empty()) return;
        const LoadedData d = load_split(cfg.format, path);
        const SparseCountMatrix& m = d.counts ? *d.counts : d.binary->counts();
        std::cout << name << ": " << path.string() << "  rows=" << m.n_rows() << " cols=" << m.n_cols()
                  << " nnz=" << m.nnz() << " total=" << m.total() << "\n";
    };
    describe("train", cfg.train_path);
    describe("validation", cfg.validation_path);
    describe("test", cfg.test_path);

    if (!split_out.empty()) {
        if (cfg.format == DataFormat::Multilabel)
            throw cli::ConfigError("--split-out is only supported for bow/binary data");
        const std::filesystem::path source =
            cfg.test_path.empty() ? cfg.validation_path : cfg.test_path;
        const LoadedData d = load_split(cfg.format, source);
        const SparseCountMatrix& m = d.counts ? *d.counts : d.binary->counts();
        const HeldoutSplit split = split_heldout(m, cfg.heldout_fraction, cfg.eval_seed);
        std::filesystem::create_directories(split_out);
        save_bow(std::filesystem::path(split_out) / "observed.txt", split.observed);
        save_bow(std::filesystem::path(split_out) / "heldout.txt", split.heldout);
        std::cout << "split written to " << split_out << " (fraction " << cfg.heldout_fraction
                  << ", seed " << cfg.eval_seed << ")\n";
    }
    return kExitOk;
}

int cmd_gradcheck(std::size_t seeds, const std::string& corrupt_op) {
    GradCheckOptions options;
    options.seeds = seeds;
    options.corrupt_op = corrupt_op;
    const auto results = run_gradient_checks(options);
    bool all_pass = true;
    std::vector<std::string> failing;
    for (const auto& r : results) {
        std::printf("%-22s worst rel err %.3e  (tol %.0e)  %s\n", r.op.c_str(), r.worst_rel_err,
                    r.tolerance, r.pass ? "ok" : "FAIL");
        if (!r.pass) {
            all_pass = false;
            failing.push_back(r.op);
        }
    }
    if (!all_pass) {
        std::printf("failing ops:");
        for (const auto& op : failing) std::printf(" %s", op.c_str());
        std::printf("\n");
        return kExitCheckFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"negative-binomial VAE family: training, evaluation, prediction"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, data_override, corrupt_op, split_out;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::size_t gradcheck_seeds = 100;
    std::size_t predict_top = 10;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "run configuration (JSON)");
        if (needs_config) opt->required();
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seed", seed, "override every seed in the config");
        sub->add_option("--threads", threads, "worker cap (overrides config)");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
    add_common(train_cmd, true);

    CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem (without .manifest.json)")
        ->required();
    eval_cmd->add_option("--data", data_override, "data file (default: config test/validation)");

    CLI::App* predict_cmd = app.add_subcommand("predict", "emit per-row label/item scores");
    add_common(predict_cmd, true);
    predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem")->required();
    predict_cmd->add_option("--data", data_override, "data file (default: config test/validation)");
    predict_cmd->add_option("--top", predict_top, "scores per row (0 = all)");

    CLI::App* prepare_cmd = app.add_subcommand("prepare", "validate data files; materialize splits");
    add_common(prepare_cmd, true);
    prepare_cmd->add_option("--split-out", split_out, "write observed/heldout bow files here");

    CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck_cmd->add_option("--seeds", gradcheck_seeds, "random seeds per op");
    gradcheck_cmd->add_option("--corrupt-op", corrupt_op, "test fixture: corrupt this op's gradient")
        ->group("");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck_seeds, corrupt_op);

        RunConfig cfg = load_config_with_overrides(config_path, out_dir, seed, threads);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (eval_cmd->parsed()) return cmd_evaluate(cfg, checkpoint, data_override);
        if (predict_cmd->parsed()) return cmd_predict(cfg, checkpoint, data_override, predict_top);
        if (prepare_cmd->parsed()) return cmd_prepare(cfg, split_out);
    } catch (const cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const LoadError& e) {
        std::cerr << "load error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericDomainError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const EvalError& e) {
        std::cerr << "evaluation error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}
