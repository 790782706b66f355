#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nbvae/checkpoint.hpp"
#include "nbvae/sparse_data.hpp"
#include "support/synthetic.hpp"

using namespace nbvae;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / "nbvae_cli_io";
    fs::create_directories(dir);
    const fs::path out_file = dir / ("out" + std::to_string(counter));
    const fs::path err_file = dir / ("err" + std::to_string(counter));
    ++counter;
    const std::string cmd = std::string(NBVAE_CLI_PATH) + " " + args + " > " + out_file.string() +
                            " 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WEXITSTATUS(status);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "nbvae_cli_test";
    fs::create_directories(dir);
    return dir;
}

// a small bow corpus + config, shared by several cases
struct TrainFixture {
    fs::path config_path;
    fs::path train_path;
    fs::path val_path;

    explicit TrainFixture(const std::string& tag, std::size_t extra_epochs = 3) {
        const fs::path dir = work_dir() / tag;
        fs::create_directories(dir);
        train_path = dir / "train.txt";
        val_path = dir / "val.txt";
        save_bow(train_path, testsupport::nb_mixture_corpus(120, 30, 41));
        save_bow(val_path, testsupport::nb_mixture_corpus(40, 30, 42));

        nlohmann::ordered_json j;
        j["variant"] = "nbvae";
        j["data"]["format"] = "bow";
        j["data"]["train"] = train_path.string();
        j["data"]["validation"] = val_path.string();
        j["model"]["latent_dim"] = 4;
        j["model"]["encoder_layers"] = {8};
        j["model"]["decoder_layers"] = {8};
        j["model"]["seed"] = 7;
        j["train"]["max_epochs"] = extra_epochs;
        j["train"]["batch_size"] = 32;
        j["train"]["seed"] = 7;
        j["eval"]["heldout_fraction"] = 0.3;
        j["eval"]["seed"] = 5;
        j["output_dir"] = (dir / "run").string();
        config_path = dir / "config.json";
        std::ofstream(config_path) << j.dump(2);
    }

    fs::path run_dir() const { return config_path.parent_path() / "run"; }
};

}  // namespace

TEST_CASE("train writes checkpoint, history, report, and resolved config") {
    TrainFixture fx("smoke");
    const CliResult r = run_cli("train --config " + fx.config_path.string());
    INFO(r.err);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(fx.run_dir() / "checkpoint.manifest.json"));
    CHECK(fs::exists(fx.run_dir() / "checkpoint.bin"));
    CHECK(fs::exists(fx.run_dir() / "history.csv"));
    CHECK(fs::exists(fx.run_dir() / "validation_report.json"));
    CHECK(fs::exists(fx.run_dir() / "config.resolved.json"));
    CHECK(r.out.find("perplexity") != std::string::npos);

    // the resolved config replayed verbatim reproduces the run
    const CliResult replay = run_cli("train --config " +
                                     (fx.run_dir() / "config.resolved.json").string());
    CHECK(replay.exit_code == 0);
}

TEST_CASE("identical configs give byte-identical checkpoints and reports") {
    TrainFixture fx("determinism");
    const std::string out_a = (work_dir() / "determinism" / "run_a").string();
    const std::string out_b = (work_dir() / "determinism" / "run_b").string();
    CHECK(run_cli("train --config " + fx.config_path.string() + " --out " + out_a).exit_code == 0);
    CHECK(run_cli("train --config " + fx.config_path.string() + " --out " + out_b).exit_code == 0);

    CHECK(slurp(fs::path(out_a) / "checkpoint.bin") == slurp(fs::path(out_b) / "checkpoint.bin"));
    CHECK(slurp(fs::path(out_a) / "checkpoint.manifest.json") ==
          slurp(fs::path(out_b) / "checkpoint.manifest.json"));
    CHECK(slurp(fs::path(out_a) / "validation_report.json") ==
          slurp(fs::path(out_b) / "validation_report.json"));
    CHECK(!slurp(fs::path(out_a) / "checkpoint.bin").empty());
}

TEST_CASE("evaluate right after train reproduces the validation numbers") {
    TrainFixture fx("eval_consistency");
    CHECK(run_cli("train --config " + fx.config_path.string()).exit_code == 0);

    const std::string eval_out = (work_dir() / "eval_consistency" / "eval").string();
    const CliResult r = run_cli("evaluate --config " + fx.config_path.string() + " --checkpoint " +
                                (fx.run_dir() / "checkpoint").string() + " --data " +
                                fx.val_path.string() + " --out " + eval_out);
    INFO(r.err);
    CHECK(r.exit_code == 0);

    const auto train_report = nlohmann::json::parse(slurp(fx.run_dir() / "validation_report.json"));
    const auto eval_report = nlohmann::json::parse(slurp(fs::path(eval_out) / "eval_report.json"));
    CHECK(train_report.at("metrics") == eval_report.at("metrics"));
}

TEST_CASE("missing data path exits 2 and names the path") {
    TrainFixture fx("missing_path");
    fs::remove(fx.train_path);
    const CliResult r = run_cli("train --config " + fx.config_path.string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find(fx.train_path.string()) != std::string::npos);
}

TEST_CASE("unknown config keys exit 2 naming the key") {
    TrainFixture fx("unknown_key");
    auto j = nlohmann::ordered_json::parse(slurp(fx.config_path));
    j["train"]["learnign_rate"] = 0.1;  // typo on purpose
    std::ofstream(fx.config_path) << j.dump(2);
    const CliResult r = run_cli("train --config " + fx.config_path.string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("learnign_rate") != std::string::npos);
}

TEST_CASE("unknown metric exits 2") {
    TrainFixture fx("unknown_metric");
    auto j = nlohmann::ordered_json::parse(slurp(fx.config_path));
    j["eval"]["metrics"] = {"ndcg@10"};  // wrong modality for bow
    std::ofstream(fx.config_path) << j.dump(2);
    const CliResult r = run_cli("train --config " + fx.config_path.string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("ndcg@10") != std::string::npos);
}

TEST_CASE("perplexity of a uniform dummy checkpoint is V") {
    const fs::path dir = work_dir() / "uniform";
    fs::create_directories(dir);
    const std::size_t v = 100;
    save_bow(dir / "data.txt", testsupport::nb_mixture_corpus(30, v, 55));

    ModelConfig mc;
    mc.variant = Variant::Multivae;
    mc.input_dim = v;
    mc.latent_dim = 3;
    mc.encoder_layers = {6};
    mc.decoder_layers = {6};
    mc.seed = 1;
    ModelParams params = ModelParams::init(mc);
    params.rate_head.weight.value.setZero();
    params.rate_head.bias.value.setZero();
    save_checkpoint(dir / "uniform_ckpt", params);

    nlohmann::ordered_json j;
    j["variant"] = "multivae";
    j["data"]["format"] = "bow";
    j["data"]["train"] = (dir / "data.txt").string();
    j["data"]["validation"] = (dir / "data.txt").string();
    j["output_dir"] = (dir / "eval").string();
    std::ofstream(dir / "config.json") << j.dump(2);

    const CliResult r = run_cli("evaluate --config " + (dir / "config.json").string() +
                                " --checkpoint " + (dir / "uniform_ckpt").string());
    INFO(r.err);
    CHECK(r.exit_code == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "eval" / "eval_report.json"));
    CHECK(report.at("metrics").at("perplexity").get<double>() ==
          doctest::Approx(static_cast<double>(v)).epsilon(1e-8));
}

TEST_CASE("evaluate rejects a checkpoint/data shape mismatch") {
    const fs::path dir = work_dir() / "mismatch";
    fs::create_directories(dir);
    save_bow(dir / "data.txt", testsupport::nb_mixture_corpus(10, 12, 3));

    ModelConfig mc;
    mc.variant = Variant::Nbvae;
    mc.input_dim = 20;  // disagrees with the data
    mc.latent_dim = 2;
    mc.seed = 1;
    save_checkpoint(dir / "ckpt", ModelParams::init(mc));

    nlohmann::ordered_json j;
    j["variant"] = "nbvae";
    j["data"]["format"] = "bow";
    j["data"]["train"] = (dir / "data.txt").string();
    j["data"]["validation"] = (dir / "data.txt").string();
    j["output_dir"] = (dir / "eval").string();
    std::ofstream(dir / "config.json") << j.dump(2);

    const CliResult r = run_cli("evaluate --config " + (dir / "config.json").string() +
                                " --checkpoint " + (dir / "ckpt").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("prepare reports stats and materializes a split") {
    TrainFixture fx("prepare");
    const std::string split_dir = (work_dir() / "prepare" / "split").string();
    const CliResult r = run_cli("prepare --config " + fx.config_path.string() + " --split-out " +
                                split_dir);
    INFO(r.err);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("rows=120") != std::string::npos);

    const SparseCountMatrix source = load_bow(fx.val_path);
    const SparseCountMatrix observed = load_bow(fs::path(split_dir) / "observed.txt");
    const SparseCountMatrix heldout = load_bow(fs::path(split_dir) / "heldout.txt");
    CHECK(observed.total() + heldout.total() == source.total());
}

TEST_CASE("predict writes ranked scores") {
    TrainFixture fx("predict");
    CHECK(run_cli("train --config " + fx.config_path.string()).exit_code == 0);
    const std::string out = (work_dir() / "predict" / "pred").string();
    const CliResult r = run_cli("predict --config " + fx.config_path.string() + " --checkpoint " +
                                (fx.run_dir() / "checkpoint").string() + " --out " + out +
                                " --top 3");
    INFO(r.err);
    CHECK(r.exit_code == 0);
    std::ifstream in(fs::path(out) / "predictions.tsv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "row\trank\tindex\tscore");
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 40 * 3);  // validation rows x top
}

TEST_CASE("binary-format run trains nbvae_b and reports ranking metrics") {
    const fs::path dir = work_dir() / "binary_run";
    fs::create_directories(dir);
    const BinaryMatrix all = testsupport::latent_factor_binary(80, 40, 4, -1.2, 4, 8);
    save_bow(dir / "train.txt", testsupport::slice_rows(all, 0, 60).counts());
    save_bow(dir / "val.txt", testsupport::slice_rows(all, 60, 80).counts());

    nlohmann::ordered_json j;
    j["variant"] = "nbvae_b";
    j["data"]["format"] = "binary";
    j["data"]["train"] = (dir / "train.txt").string();
    j["data"]["validation"] = (dir / "val.txt").string();
    j["model"]["latent_dim"] = 4;
    j["model"]["encoder_layers"] = {12};
    j["model"]["decoder_layers"] = {12};
    j["train"]["max_epochs"] = 2;
    j["train"]["batch_size"] = 20;
    j["eval"]["r_values"] = {1, 5};
    j["output_dir"] = (dir / "run").string();
    std::ofstream(dir / "config.json") << j.dump(2);

    const CliResult r = run_cli("train --config " + (dir / "config.json").string());
    INFO(r.err);
    CHECK(r.exit_code == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "run" / "validation_report.json"));
    CHECK(report.at("metrics").contains("ndcg@5"));
    CHECK(report.at("metrics").contains("recall@1"));
    // the beta cap for binary data lands in the resolved config
    const auto resolved = nlohmann::json::parse(slurp(dir / "run" / "config.resolved.json"));
    CHECK(resolved.at("train").at("beta_max").get<double>() == 0.2);
}

TEST_CASE("multilabel-format run trains nbvae_c and reports precision") {
    const fs::path dir = work_dir() / "multilabel_run";
    fs::create_directories(dir);
    const auto set = testsupport::planted_multilabel(120, 6, 12, 2.0, -2.0, 9);

    auto write_ml = [](const fs::path& path, const FeatureMatrix& x, const BinaryMatrix& y) {
        std::ofstream out(path);
        out << x.n_rows << ' ' << x.n_dims << ' ' << y.n_cols() << '\n';
        for (std::size_t j = 0; j < x.n_rows; ++j) {
            std::string labels;
            for (const auto& e : y.counts().row(j)) {
                if (!labels.empty()) labels += ',';
                labels += std::to_string(e.col);
            }
            out << labels;
            for (const auto& [d, v] : x.rows[j]) out << ' ' << d << ':' << v;
            out << '\n';
        }
    };
    write_ml(dir / "train.txt", testsupport::slice_rows(set.features, 0, 90),
             testsupport::slice_rows(set.labels, 0, 90));
    write_ml(dir / "val.txt", testsupport::slice_rows(set.features, 90, 120),
             testsupport::slice_rows(set.labels, 90, 120));

    nlohmann::ordered_json j;
    j["variant"] = "nbvae_c";
    j["data"]["format"] = "multilabel";
    j["data"]["train"] = (dir / "train.txt").string();
    j["data"]["validation"] = (dir / "val.txt").string();
    j["model"]["latent_dim"] = 4;
    j["model"]["encoder_layers"] = {10};
    j["model"]["decoder_layers"] = {10};
    j["train"]["max_epochs"] = 2;
    j["train"]["batch_size"] = 30;
    j["eval"]["r_values"] = {1, 3};
    j["output_dir"] = (dir / "run").string();
    std::ofstream(dir / "config.json") << j.dump(2);

    const CliResult r = run_cli("train --config " + (dir / "config.json").string());
    INFO(r.err);
    CHECK(r.exit_code == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "run" / "validation_report.json"));
    CHECK(report.at("metrics").contains("precision@1"));
    CHECK(report.at("metrics").contains("precision@3"));

    // variant/format compatibility is rejected up front
    auto bad = nlohmann::ordered_json::parse(slurp(dir / "config.json"));
    bad["variant"] = "nbvae_b";
    std::ofstream(dir / "bad.json") << bad.dump(2);
    CHECK(run_cli("train --config " + (dir / "bad.json").string()).exit_code == 2);
}

TEST_CASE("gradcheck passes on a fresh build and fails when corrupted") {
    const CliResult ok = run_cli("gradcheck --seeds 3");
    INFO(ok.out);
    CHECK(ok.exit_code == 0);
    CHECK(ok.out.find("lgamma") != std::string::npos);

    const CliResult bad = run_cli("gradcheck --seeds 2 --corrupt-op exp");
    CHECK(bad.exit_code == 1);
    CHECK(bad.out.find("failing ops: exp") != std::string::npos);
}
