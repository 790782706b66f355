#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nbvae/checkpoint.hpp"
#include "nbvae/training.hpp"
#include "support/synthetic.hpp"

using namespace nbvae;
using diff::Matrix;

namespace {

ModelConfig small_model(Variant v, std::size_t input_dim, std::uint64_t seed) {
    ModelConfig mc;
    mc.variant = v;
    mc.input_dim = input_dim;
    mc.latent_dim = 4;
    mc.encoder_layers = {16};
    mc.decoder_layers = {16};
    mc.seed = seed;
    return mc;
}

}  // namespace

TEST_CASE("kl_beta ramps linearly and caps at beta_max") {
    CHECK(kl_beta(0, 100, 1.0) == 0.0);
    CHECK(kl_beta(100, 100, 1.0) == 1.0);
    CHECK(kl_beta(50, 100, 0.2) == doctest::Approx(0.2));
    CHECK(kl_beta(25, 100, 1.0) == doctest::Approx(0.25));
    CHECK(kl_beta(1000, 100, 0.7) == doctest::Approx(0.7));
    CHECK_THROWS_AS(kl_beta(1, 0, 1.0), ContractError);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    diff::Parameter p("w", Matrix::Constant(2, 2, 1.25));
    p.zero_grad();
    diff::Parameter* ptr = &p;
    adam_step({&ptr, 1}, 0.1, 0.9, 0.999, 1e-8, 1);
    CHECK(p.value.isApprox(Matrix::Constant(2, 2, 1.25)));
}

TEST_CASE("adam first step moves by lr in the gradient direction") {
    diff::Parameter p("w", Matrix::Zero(1, 1));
    p.grad.setConstant(1.0);
    diff::Parameter* ptr = &p;
    adam_step({&ptr, 1}, 0.1, 0.9, 0.999, 1e-8, 1);
    CHECK(std::abs(p.value(0, 0) + 0.1) < 1e-8);
}

TEST_CASE("adam converges on a quadratic") {
    // direct simulation of 100 steps on (theta - 3)^2
    diff::Parameter p("theta", Matrix::Zero(1, 1));
    diff::Parameter* ptr = &p;
    for (std::size_t t = 1; t <= 100; ++t) {
        p.grad.setConstant(2.0 * (p.value(0, 0) - 3.0));
        adam_step({&ptr, 1}, 0.1, 0.9, 0.999, 1e-8, t);
    }
    CHECK(std::abs(p.value(0, 0) - 3.0) < 0.5);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    diff::Parameter p("decoder.rate.weight", Matrix::Zero(1, 2));
    p.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    diff::Parameter* ptr = &p;
    CHECK_THROWS_WITH_AS(adam_step({&ptr, 1}, 0.1, 0.9, 0.999, 1e-8, 1),
                         doctest::Contains("decoder.rate.weight"), ContractError);
    // nothing was applied
    CHECK(p.value.isZero());
    CHECK(p.adam_m.isZero());
}

TEST_CASE("train with max_epochs = 0 returns the initialized state") {
    const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(20, 10, 1);
    const SparseCountMatrix val = testsupport::nb_mixture_corpus(10, 10, 2);
    TrainingData data, vdata;
    data.counts = &corpus;
    vdata.counts = &val;

    TrainConfig tc;
    tc.max_epochs = 0;
    tc.seed = 5;
    const ModelConfig mc = small_model(Variant::Nbvae, 10, 5);
    const TrainResult result = train(mc, tc, data, vdata);
    CHECK(result.history.empty());
    CHECK(result.state.global_step == 0);
    CHECK(!result.state.aborted);
    const ModelParams fresh = ModelParams::init(mc);
    CHECK(result.state.params.rate_head.weight.value == fresh.rate_head.weight.value);
}

TEST_CASE("identical configs and seeds give byte-identical checkpoints") {
    const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(60, 12, 3);
    const SparseCountMatrix val = testsupport::nb_mixture_corpus(20, 12, 4);
    TrainingData data, vdata;
    data.counts = &corpus;
    vdata.counts = &val;

    TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 16;
    tc.seed = 77;
    const ModelConfig mc = small_model(Variant::Nbvae, 12, 8);

    const TrainResult a = train(mc, tc, data, vdata);
    const TrainResult b = train(mc, tc, data, vdata);
    CHECK(checkpoint_digest(a.state.params) == checkpoint_digest(b.state.params));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].elbo == b.history[i].elbo);
        CHECK(a.history[i].beta == b.history[i].beta);
    }

    const auto dir = std::filesystem::temp_directory_path() / "nbvae_train_det";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "a", a.state.params);
    save_checkpoint(dir / "b", b.state.params);
    auto slurp = [](const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
}

TEST_CASE("training state carries the best validation metric seen") {
    const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(80, 15, 6);
    const SparseCountMatrix val = testsupport::nb_mixture_corpus(30, 15, 7);
    TrainingData data, vdata;
    data.counts = &corpus;
    vdata.counts = &val;

    TrainConfig tc;
    tc.max_epochs = 6;
    tc.batch_size = 20;
    tc.seed = 9;
    const ModelConfig mc = small_model(Variant::Nbvae, 15, 11);
    TrainResult result = train(mc, tc, data, vdata);

    double best_seen = -std::numeric_limits<double>::infinity();
    for (const StepRecord& r : result.history)
        if (!std::isnan(r.validation_metric)) best_seen = std::max(best_seen, r.validation_metric);
    CHECK(result.state.best_validation_metric == doctest::Approx(best_seen));

    // the restored parameters reproduce that metric
    const double metric =
        validation_metric(result.state.params, vdata, tc.seed, tc.batch_size);
    CHECK(metric == doctest::Approx(result.state.best_validation_metric).epsilon(1e-12));
}

TEST_CASE("early stopping halts after `patience` stale epochs") {
    const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(60, 12, 8);
    const SparseCountMatrix val = testsupport::nb_mixture_corpus(20, 12, 9);
    TrainingData data, vdata;
    data.counts = &corpus;
    vdata.counts = &val;

    TrainConfig tc;
    tc.max_epochs = 200;
    tc.batch_size = 30;
    tc.patience = 2;
    tc.learning_rate = 0.3;  // deliberately unstable so validation plateaus
    tc.seed = 4;
    const ModelConfig mc = small_model(Variant::Nbvae, 12, 2);
    const TrainResult result = train(mc, tc, data, vdata);
    CHECK(result.state.epoch < 200);
}

TEST_CASE("non-finite ELBO aborts and retains the last-good checkpoint") {
    const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(20, 8, 11);
    TrainingData data;
    data.counts = &corpus;

    const ModelConfig mc = small_model(Variant::Nbvae, 8, 3);
    ModelParams poisoned = ModelParams::init(mc);
    poisoned.encoder_mean.weight.value(0, 0) = std::numeric_limits<double>::quiet_NaN();

    TrainOptions options;
    options.initial_params = poisoned.clone();
    TrainConfig tc;
    tc.max_epochs = 2;
    const TrainResult result = train(mc, tc, data, data, options);
    CHECK(result.state.aborted);
    CHECK(result.state.abort_reason.find("ELBO") != std::string::npos);
}

TEST_CASE("train validates modality against the variant") {
    const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(20, 8, 12);  // has counts > 1
    TrainingData data;
    data.counts = &corpus;
    TrainConfig tc;
    tc.max_epochs = 1;
    CHECK_THROWS_AS(train(small_model(Variant::NbvaeB, 8, 1), tc, data, data), ContractError);
}

TEST_CASE("history CSV has the declared column layout") {
    std::vector<StepRecord> history(3);
    history[0] = {0, 1, -5.0, 0.1, 0.0, std::numeric_limits<double>::quiet_NaN()};
    history[1] = {1, 1, -4.0, 0.2, 0.1, std::numeric_limits<double>::quiet_NaN()};
    history[2] = {2, 2, -3.5, 0.3, 0.2, -3.9};
    const auto path = std::filesystem::temp_directory_path() / "nbvae_history.csv";
    write_history_csv(path, history);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,epoch,elbo,kl,beta,validation_metric");
    std::getline(in, line);
    CHECK(line.substr(0, 4) == "0,1,");
    CHECK(line.back() == ',');  // NaN metric leaves the cell empty
    std::getline(in, line);
    std::getline(in, line);
    const double metric = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(metric == doctest::Approx(-3.9));
}

TEST_CASE("training-progress oracle on the NB-mixture corpus (short run)") {
    // the full 20-run / 20-epoch version is the acceptance criterion; this
    // is a 5-run smoke of the same property
    int passing = 0;
    for (std::uint64_t run = 0; run < 5; ++run) {
        const SparseCountMatrix corpus = testsupport::nb_mixture_corpus(200, 30, 100 + run);
        const SparseCountMatrix val = testsupport::nb_mixture_corpus(40, 30, 900 + run);
        TrainingData data, vdata;
        data.counts = &corpus;
        vdata.counts = &val;

        TrainConfig tc;
        tc.max_epochs = 8;
        tc.batch_size = 25;
        tc.anneal_steps = 1;
        tc.beta_max = 1.0;
        tc.patience = 1000;
        tc.learning_rate = 1e-3;
        tc.seed = run;
        const TrainResult result = train(small_model(Variant::Nbvae, 30, run), tc, data, vdata);

        // 10-step moving average, then per-epoch means
        std::vector<double> smoothed;
        for (std::size_t i = 0; i < result.history.size(); ++i) {
            double acc = 0.0;
            int n = 0;
            for (std::size_t k = i >= 9 ? i - 9 : 0; k <= i; ++k, ++n) acc += result.history[k].elbo;
            smoothed.push_back(acc / n);
        }
        std::vector<double> epoch_mean(tc.max_epochs, 0.0);
        std::vector<int> epoch_n(tc.max_epochs, 0);
        for (std::size_t i = 0; i < result.history.size(); ++i) {
            epoch_mean[result.history[i].epoch - 1] += smoothed[i];
            ++epoch_n[result.history[i].epoch - 1];
        }
        bool monotone = true;
        for (std::size_t e = 0; e + 1 < epoch_mean.size(); ++e) {
            const double a = epoch_mean[e] / epoch_n[e];
            const double b = epoch_mean[e + 1] / epoch_n[e + 1];
            if (b < a - 1e-9 * std::abs(a)) monotone = false;
        }
        if (monotone) ++passing;
    }
    CHECK(passing >= 4);
}
