#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nbvae/checkpoint.hpp"
#include "nbvae/distributions.hpp"
#include "nbvae/evaluation.hpp"
#include "nbvae/gradcheck.hpp"
#include "nbvae/models.hpp"
#include "nbvae/training.hpp"

namespace py = pybind11;
using namespace nbvae;

namespace {

std::vector<double> as_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

LatentGaussian gaussian_from(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance) {
    LatentGaussian g;
    g.mean = mean;
    g.variance = variance;
    g.validate();
    return g;
}

TrainingData data_view(const SparseCountMatrix* counts, const BinaryMatrix* binary,
                       const FeatureMatrix* features) {
    TrainingData d;
    d.counts = counts;
    d.binary = binary;
    d.features = features;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "negative-binomial VAE family: data, distributions, training, evaluation";

    py::register_exception<LoadError>(m, "LoadError");
    py::register_exception<DimensionError>(m, "DimensionError");
    py::register_exception<NumericDomainError>(m, "NumericDomainError");
    py::register_exception<ContractError>(m, "ContractError");
    py::register_exception<EvalError>(m, "EvalError");

    py::class_<SparseCountMatrix>(m, "SparseCountMatrix")
        .def_property_readonly("n_rows", &SparseCountMatrix::n_rows)
        .def_property_readonly("n_cols", &SparseCountMatrix::n_cols)
        .def_property_readonly("nnz", &SparseCountMatrix::nnz)
        .def("row_total", &SparseCountMatrix::row_total)
        .def("total", &SparseCountMatrix::total)
        .def("row",
             [](const SparseCountMatrix& self, std::size_t j) {
                 std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
                 for (const auto& e : self.row(j)) out.emplace_back(e.col, e.count);
                 return out;
             })
        .def("dense_row", [](const SparseCountMatrix& self, std::size_t j) {
            Eigen::VectorXd out(self.n_cols());
            self.dense_row(j, {out.data(), static_cast<std::size_t>(out.size())});
            return out;
        });

    py::class_<BinaryMatrix>(m, "BinaryMatrix")
        .def_property_readonly("n_rows", &BinaryMatrix::n_rows)
        .def_property_readonly("n_cols", &BinaryMatrix::n_cols)
        .def_property_readonly("counts", &BinaryMatrix::counts,
                               py::return_value_policy::reference_internal);

    py::class_<FeatureMatrix>(m, "FeatureMatrix")
        .def_readonly("n_rows", &FeatureMatrix::n_rows)
        .def_readonly("n_dims", &FeatureMatrix::n_dims)
        .def("dense_row", [](const FeatureMatrix& self, std::size_t j) {
            Eigen::VectorXd out(self.n_dims);
            self.dense_row(j, {out.data(), static_cast<std::size_t>(out.size())});
            return out;
        });

    py::class_<HeldoutSplit>(m, "HeldoutSplit")
        .def_readonly("observed", &HeldoutSplit::observed)
        .def_readonly("heldout", &HeldoutSplit::heldout)
        .def_readonly("seed", &HeldoutSplit::seed)
        .def_readonly("fraction", &HeldoutSplit::fraction);

    m.def("load_bow", &load_bow, py::arg("path"));
    m.def("load_binary", &load_binary, py::arg("path"));
    m.def("load_multilabel", &load_multilabel, py::arg("path"));
    m.def("save_bow", &save_bow, py::arg("path"), py::arg("matrix"));
    m.def("split_heldout", &split_heldout, py::arg("matrix"), py::arg("fraction"), py::arg("seed"));
    m.def("minibatches", &minibatch_indices, py::arg("n_rows"), py::arg("batch_size"),
          py::arg("seed"));

    m.def(
        "nb_logpmf",
        [](const Eigen::VectorXd& y, const Eigen::VectorXd& r, const Eigen::VectorXd& p) {
            return nb_logpmf(as_vec(y), as_vec(r), as_vec(p));
        },
        py::arg("y"), py::arg("r"), py::arg("p"));
    m.def(
        "dirmulti_logpmf",
        [](const Eigen::VectorXd& y, const Eigen::VectorXd& r) {
            return dirmulti_logpmf(as_vec(y), as_vec(r));
        },
        py::arg("y"), py::arg("r"));
    m.def(
        "multinomial_loglik",
        [](const Eigen::VectorXd& y, const Eigen::VectorXd& logits) {
            return multinomial_loglik(as_vec(y), as_vec(logits));
        },
        py::arg("y"), py::arg("logits"));
    m.def(
        "bernoulli_link_loglik",
        [](const Eigen::VectorXd& y, const Eigen::VectorXd& r, const Eigen::VectorXd& p) {
            return bernoulli_link_loglik(as_vec(y), as_vec(r), as_vec(p));
        },
        py::arg("y"), py::arg("r"), py::arg("p"));
    m.def(
        "kl_standard",
        [](const Eigen::VectorXd& mean, const Eigen::VectorXd& variance) {
            return kl_standard(gaussian_from(mean, variance));
        },
        py::arg("mean"), py::arg("variance"));
    m.def(
        "kl_general",
        [](const Eigen::VectorXd& q_mean, const Eigen::VectorXd& q_variance,
           const Eigen::VectorXd& p_mean, const Eigen::VectorXd& p_variance) {
            return kl_general(gaussian_from(q_mean, q_variance), gaussian_from(p_mean, p_variance));
        },
        py::arg("q_mean"), py::arg("q_variance"), py::arg("p_mean"), py::arg("p_variance"));
    m.def(
        "reparam_sample",
        [](const Eigen::VectorXd& mean, const Eigen::VectorXd& variance,
           const Eigen::VectorXd& noise) {
            return reparam_sample(gaussian_from(mean, variance), as_vec(noise));
        },
        py::arg("mean"), py::arg("variance"), py::arg("noise"));

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init([](const std::string& variant, std::size_t input_dim, std::size_t latent_dim,
                         std::vector<std::size_t> encoder_layers,
                         std::vector<std::size_t> decoder_layers, std::size_t feature_dim,
                         std::uint64_t seed) {
                 ModelConfig mc;
                 mc.variant = variant_from_string(variant);
                 mc.input_dim = input_dim;
                 mc.latent_dim = latent_dim;
                 mc.encoder_layers = std::move(encoder_layers);
                 mc.decoder_layers = std::move(decoder_layers);
                 mc.feature_dim = feature_dim;
                 mc.seed = seed;
                 mc.validate();
                 return mc;
             }),
             py::arg("variant"), py::arg("input_dim"), py::arg("latent_dim"),
             py::arg("encoder_layers") = std::vector<std::size_t>{128, 64},
             py::arg("decoder_layers") = std::vector<std::size_t>{64}, py::arg("feature_dim") = 0,
             py::arg("seed") = 0)
        .def_property_readonly("variant",
                               [](const ModelConfig& mc) { return variant_to_string(mc.variant); })
        .def_readonly("input_dim", &ModelConfig::input_dim)
        .def_readonly("latent_dim", &ModelConfig::latent_dim)
        .def_readonly("feature_dim", &ModelConfig::feature_dim)
        .def_readonly("seed", &ModelConfig::seed);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
        .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
        .def_readwrite("adam_eps", &TrainConfig::adam_eps)
        .def_readwrite("anneal_steps", &TrainConfig::anneal_steps)
        .def_readwrite("beta_max", &TrainConfig::beta_max)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("alternate_period", &TrainConfig::alternate_period);

    py::class_<ModelParams>(m, "ModelParams")
        .def_static("init", &ModelParams::init, py::arg("config"))
        .def_property_readonly("config", [](const ModelParams& p) { return p.config; })
        .def("digest", [](const ModelParams& p) { return checkpoint_digest(p); });

    m.def(
        "encode",
        [](const ModelParams& params, const Eigen::VectorXd& y) {
            const LatentGaussian q = encode(params, as_vec(y));
            return py::make_tuple(q.mean, q.variance);
        },
        py::arg("params"), py::arg("y"));
    m.def(
        "feature_encode",
        [](const ModelParams& params, const Eigen::VectorXd& x) {
            const LatentGaussian q = feature_encode(params, as_vec(x));
            return py::make_tuple(q.mean, q.variance);
        },
        py::arg("params"), py::arg("x"));
    m.def(
        "decode",
        [](const ModelParams& params, const Eigen::VectorXd& z) {
            const LikelihoodParams lik = decode(params, as_vec(z));
            py::dict out;
            if (lik.rate.size()) out["rate"] = lik.rate;
            if (lik.prob.size()) out["prob"] = lik.prob;
            if (lik.logits.size()) out["logits"] = lik.logits;
            return out;
        },
        py::arg("params"), py::arg("z"));
    m.def(
        "score_labels",
        [](const ModelParams& params, const Eigen::VectorXd& x) {
            return score_labels(params, as_vec(x));
        },
        py::arg("params"), py::arg("x"));

    py::class_<StepRecord>(m, "StepRecord")
        .def_readonly("step", &StepRecord::step)
        .def_readonly("epoch", &StepRecord::epoch)
        .def_readonly("elbo", &StepRecord::elbo)
        .def_readonly("kl", &StepRecord::kl)
        .def_readonly("beta", &StepRecord::beta)
        .def_readonly("validation_metric", &StepRecord::validation_metric);

    py::class_<TrainResult>(m, "TrainResult")
        .def_property_readonly("params", [](const TrainResult& r) { return r.state.params.clone(); })
        .def_property_readonly("epoch", [](const TrainResult& r) { return r.state.epoch; })
        .def_property_readonly("global_step",
                               [](const TrainResult& r) { return r.state.global_step; })
        .def_property_readonly("best_validation_metric",
                               [](const TrainResult& r) { return r.state.best_validation_metric; })
        .def_property_readonly("aborted", [](const TrainResult& r) { return r.state.aborted; })
        .def_property_readonly("abort_reason",
                               [](const TrainResult& r) { return r.state.abort_reason; })
        .def_readonly("history", &TrainResult::history);

    m.def(
        "train",
        [](const ModelConfig& mc, const TrainConfig& tc, const SparseCountMatrix* counts,
           const BinaryMatrix* binary, const FeatureMatrix* features,
           const SparseCountMatrix* val_counts, const BinaryMatrix* val_binary,
           const FeatureMatrix* val_features) {
            return train(mc, tc, data_view(counts, binary, features),
                         data_view(val_counts, val_binary, val_features));
        },
        py::arg("model_config"), py::arg("train_config"), py::arg("counts") = nullptr,
        py::arg("binary") = nullptr, py::arg("features") = nullptr, py::arg("val_counts") = nullptr,
        py::arg("val_binary") = nullptr, py::arg("val_features") = nullptr);

    m.def("save_checkpoint", &save_checkpoint, py::arg("stem"), py::arg("params"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("stem"));

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("metrics", &EvalReport::metrics)
        .def_readonly("r_values", &EvalReport::r_values)
        .def_readonly("dataset_id", &EvalReport::dataset_id)
        .def_readonly("checkpoint_id", &EvalReport::checkpoint_id)
        .def_readonly("wall_clock_seconds", &EvalReport::wall_clock_seconds);

    m.def(
        "predictive_rate",
        [](const std::string& variant, const Eigen::VectorXd& rate, const Eigen::VectorXd& prob,
           const Eigen::VectorXd& logits, const Eigen::VectorXd& observed) {
            LikelihoodParams lik;
            lik.rate = rate;
            lik.prob = prob;
            lik.logits = logits;
            const PredictiveRate pr =
                predictive_rate(variant_from_string(variant), lik, as_vec(observed));
            return py::make_tuple(pr.rates, pr.normalized);
        },
        py::arg("variant"), py::arg("rate") = Eigen::VectorXd(), py::arg("prob") = Eigen::VectorXd(),
        py::arg("logits") = Eigen::VectorXd(), py::arg("observed") = Eigen::VectorXd());
    m.def("perplexity", &perplexity, py::arg("params"), py::arg("test"), py::arg("split_fraction"),
          py::arg("seed"), py::arg("threads") = 1);
    m.def(
        "rank_metrics",
        [](const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& heldout,
           const std::vector<std::uint8_t>& exclude, const std::vector<std::size_t>& r_values) {
            const RankMetricValues v = rank_metrics(as_vec(scores), heldout, exclude, r_values);
            return py::make_tuple(v.recall, v.ndcg);
        },
        py::arg("scores"), py::arg("heldout"), py::arg("exclude"), py::arg("r_values"));
    m.def(
        "precision_at_r",
        [](const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& truth,
           const std::vector<std::size_t>& r_values) {
            return precision_at_r(as_vec(scores), truth, r_values);
        },
        py::arg("scores"), py::arg("true_labels"), py::arg("r_values"));
    m.def(
        "evaluate_ranking",
        [](const ModelParams& params, const BinaryMatrix& test, double fold_fraction,
           std::uint64_t seed, const std::vector<std::size_t>& r_values, int threads) {
            return evaluate_ranking(params, test, fold_fraction, seed, r_values, threads);
        },
        py::arg("params"), py::arg("test"), py::arg("fold_fraction"), py::arg("seed"),
        py::arg("r_values"), py::arg("threads") = 1);
    m.def(
        "evaluate_multilabel",
        [](const ModelParams& params, const FeatureMatrix& features, const BinaryMatrix& labels,
           const std::vector<std::size_t>& r_values, int threads) {
            return evaluate_multilabel(params, features, labels, r_values, threads);
        },
        py::arg("params"), py::arg("features"), py::arg("labels"), py::arg("r_values"),
        py::arg("threads") = 1);
    m.def("evaluate_perplexity", &evaluate_perplexity, py::arg("params"), py::arg("test"),
          py::arg("split_fraction"), py::arg("seed"), py::arg("threads") = 1);

    m.def(
        "run_gradient_checks",
        [](std::size_t seeds, const std::string& corrupt_op) {
            GradCheckOptions options;
            options.seeds = seeds;
            options.corrupt_op = corrupt_op;
            std::vector<py::dict> out;
            for (const auto& r : run_gradient_checks(options)) {
                py::dict d;
                d["op"] = r.op;
                d["worst_rel_err"] = r.worst_rel_err;
                d["tolerance"] = r.tolerance;
                d["pass"] = r.pass;
                out.push_back(std::move(d));
            }
            return out;
        },
        py::arg("seeds") = 20, py::arg("corrupt_op") = "");
}
