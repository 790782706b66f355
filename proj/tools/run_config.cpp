#include "run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace nbvae::cli {

using ordered_json = nlohmann::ordered_json;

DataFormat format_from_string(const std::string& s) {
    if (s == "bow") return DataFormat::Bow;
    if (s == "binary") return DataFormat::Binary;
    if (s == "multilabel") return DataFormat::Multilabel;
    throw ConfigError("data.format: unknown format '" + s + "' (expected bow|binary|multilabel)");
}

std::string format_to_string(DataFormat f) {
    switch (f) {
        case DataFormat::Bow: return "bow";
        case DataFormat::Binary: return "binary";
        case DataFormat::Multilabel: return "multilabel";
    }
    return "?";
}

namespace {

void reject_unknown_keys(const ordered_json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!known.count(key))
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T get_field(const ordered_json& obj, const std::string& where, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + "." + key + ": malformed value");
    }
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }

    reject_unknown_keys(j, {"variant", "data", "model", "train", "eval", "output_dir", "threads"},
                        "config");

    RunConfig c;
    c.variant = get_field<std::string>(j, "config", "variant", c.variant);
    variant_from_string(c.variant);  // validates the name

    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown_keys(d, {"format", "train", "validation", "test"}, "data");
        c.format = format_from_string(get_field<std::string>(d, "data", "format", "bow"));
        c.train_path = get_field<std::string>(d, "data", "train", "");
        c.validation_path = get_field<std::string>(d, "data", "validation", "");
        c.test_path = get_field<std::string>(d, "data", "test", "");
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown_keys(m, {"latent_dim", "encoder_layers", "decoder_layers", "seed"}, "model");
        c.latent_dim = get_field<std::size_t>(m, "model", "latent_dim", c.latent_dim);
        c.encoder_layers = get_field<std::vector<std::size_t>>(m, "model", "encoder_layers", c.encoder_layers);
        c.decoder_layers = get_field<std::vector<std::size_t>>(m, "model", "decoder_layers", c.decoder_layers);
        c.model_seed = get_field<std::uint64_t>(m, "model", "seed", c.model_seed);
    }

    // collaborative-filtering runs cap the KL weight at 0.2 by default
    if (c.format == DataFormat::Binary) c.train.beta_max = 0.2;

    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown_keys(t,
                            {"batch_size", "max_epochs", "learning_rate", "adam_beta1", "adam_beta2",
                             "adam_eps", "anneal_steps", "beta_max", "patience", "seed",
                             "alternate_period"},
                            "train");
        c.train.batch_size = get_field<std::size_t>(t, "train", "batch_size", c.train.batch_size);
        c.train.max_epochs = get_field<std::size_t>(t, "train", "max_epochs", c.train.max_epochs);
        c.train.learning_rate = get_field<double>(t, "train", "learning_rate", c.train.learning_rate);
        c.train.adam_beta1 = get_field<double>(t, "train", "adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = get_field<double>(t, "train", "adam_beta2", c.train.adam_beta2);
        c.train.adam_eps = get_field<double>(t, "train", "adam_eps", c.train.adam_eps);
        c.train.anneal_steps = get_field<std::size_t>(t, "train", "anneal_steps", c.train.anneal_steps);
        c.train.beta_max = get_field<double>(t, "train", "beta_max", c.train.beta_max);
        c.train.patience = get_field<std::size_t>(t, "train", "patience", c.train.patience);
        c.train.seed = get_field<std::uint64_t>(t, "train", "seed", c.train.seed);
        c.train.alternate_period = get_field<std::size_t>(t, "train", "alternate_period", c.train.alternate_period);
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown_keys(e, {"r_values", "heldout_fraction", "fold_fraction", "seed", "metrics"},
                            "eval");
        c.r_values = get_field<std::vector<std::size_t>>(e, "eval", "r_values", c.r_values);
        c.heldout_fraction = get_field<double>(e, "eval", "heldout_fraction", c.heldout_fraction);
        c.fold_fraction = get_field<double>(e, "eval", "fold_fraction", c.fold_fraction);
        c.eval_seed = get_field<std::uint64_t>(e, "eval", "seed", c.eval_seed);
        c.metrics = get_field<std::vector<std::string>>(e, "eval", "metrics", c.metrics);
    }

    c.output_dir = get_field<std::string>(j, "config", "output_dir", c.output_dir.string());
    c.threads = get_field<int>(j, "config", "threads", c.threads);
    if (c.metrics.empty()) c.metrics = c.default_metrics();
    return c;
}

std::vector<std::string> RunConfig::default_metrics() const {
    switch (format) {
        case DataFormat::Bow: return {"perplexity"};
        case DataFormat::Binary: {
            std::vector<std::string> out;
            for (std::size_t r : r_values) {
                out.push_back("recall@" + std::to_string(r));
                out.push_back("ndcg@" + std::to_string(r));
            }
            return out;
        }
        case DataFormat::Multilabel: {
            std::vector<std::string> out;
            for (std::size_t r : r_values) out.push_back("precision@" + std::to_string(r));
            return out;
        }
    }
    return {};
}

void RunConfig::validate() const {
    const Variant v = variant_from_string(variant);
    if (train_path.empty()) throw ConfigError("data.train: path is required");
    if (!std::filesystem::exists(train_path))
        throw ConfigError("data.train: path does not exist: " + train_path.string());
    if (validation_path.empty()) throw ConfigError("data.validation: path is required");
    if (!std::filesystem::exists(validation_path))
        throw ConfigError("data.validation: path does not exist: " + validation_path.string());
    if (!test_path.empty() && !std::filesystem::exists(test_path))
        throw ConfigError("data.test: path does not exist: " + test_path.string());

    // variant/format compatibility, checked before any work
    switch (v) {
        case Variant::Nbvae:
        case Variant::NbvaeDm:
        case Variant::Multivae:
            if (format == DataFormat::Multilabel)
                throw ConfigError("variant: " + variant + " does not take multilabel data");
            break;
        case Variant::NbvaeB:
            if (format != DataFormat::Binary)
                throw ConfigError("variant: nbvae_b requires data.format = binary");
            break;
        case Variant::NbvaeC:
            if (format != DataFormat::Multilabel)
                throw ConfigError("variant: nbvae_c requires data.format = multilabel");
            break;
    }

    const std::vector<std::string> allowed = default_metrics();
    for (const std::string& m : metrics) {
        bool ok = false;
        for (const std::string& a : allowed)
            if (m == a) ok = true;
        if (!ok)
            throw ConfigError("eval.metrics: unknown metric '" + m + "' for format " +
                              format_to_string(format) + " with the configured R values");
    }

    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
        throw ConfigError("eval.heldout_fraction: must lie strictly in (0, 1)");
    if (!(fold_fraction > 0.0 && fold_fraction < 1.0))
        throw ConfigError("eval.fold_fraction: must lie strictly in (0, 1)");
    if (threads < 1) throw ConfigError("threads: must be >= 1");
    try {
        train.validate();
    } catch (const ContractError& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
    ordered_json j;
    j["variant"] = variant;
    j["data"]["format"] = format_to_string(format);
    j["data"]["train"] = train_path.string();
    j["data"]["validation"] = validation_path.string();
    j["data"]["test"] = test_path.string();
    j["model"]["latent_dim"] = latent_dim;
    j["model"]["encoder_layers"] = encoder_layers;
    j["model"]["decoder_layers"] = decoder_layers;
    j["model"]["seed"] = model_seed;
    j["train"]["batch_size"] = train.batch_size;
    j["train"]["max_epochs"] = train.max_epochs;
    j["train"]["learning_rate"] = train.learning_rate;
    j["train"]["adam_beta1"] = train.adam_beta1;
    j["train"]["adam_beta2"] = train.adam_beta2;
    j["train"]["adam_eps"] = train.adam_eps;
    j["train"]["anneal_steps"] = train.anneal_steps;
    j["train"]["beta_max"] = train.beta_max;
    j["train"]["patience"] = train.patience;
    j["train"]["seed"] = train.seed;
    j["train"]["alternate_period"] = train.alternate_period;
    j["eval"]["r_values"] = r_values;
    j["eval"]["heldout_fraction"] = heldout_fraction;
    j["eval"]["fold_fraction"] = fold_fraction;
    j["eval"]["seed"] = eval_seed;
    j["eval"]["metrics"] = metrics;
    j["output_dir"] = output_dir.string();
    j["threads"] = threads;

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write resolved config to " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace nbvae::cli
