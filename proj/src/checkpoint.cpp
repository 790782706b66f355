#include "nbvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace nbvae {

namespace {

using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

std::vector<double> tensor_row_major(const diff::Parameter& p) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
        for (Eigen::Index j = 0; j < p.value.cols(); ++j) out.push_back(p.value(i, j));
    return out;
}

ordered_json config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["variant"] = variant_to_string(c.variant);
    j["input_dim"] = c.input_dim;
    j["latent_dim"] = c.latent_dim;
    j["encoder_layers"] = c.encoder_layers;
    j["decoder_layers"] = c.decoder_layers;
    j["feature_dim"] = c.feature_dim;
    j["seed"] = c.seed;
    return j;
}

ModelConfig config_from_json(const ordered_json& j) {
    ModelConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::vector<std::size_t>>();
    c.decoder_layers = j.at("decoder_layers").get<std::vector<std::size_t>>();
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params) {
    const auto tensors = params.parameters();

    ordered_json manifest;
    manifest["format"] = "nbvae-checkpoint-v1";
    manifest["config"] = config_to_json(params.config);
    manifest["tensors"] = ordered_json::array();

    std::filesystem::path bin_path = stem;
    bin_path += ".bin";
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw LoadError("cannot write " + bin_path.string());

    std::uint64_t offset = 0;
    for (const diff::Parameter* p : tensors) {
        ordered_json t;
        t["name"] = p->name;
        t["rows"] = p->value.rows();
        t["cols"] = p->value.cols();
        t["offset"] = offset;
        manifest["tensors"].push_back(std::move(t));

        const std::vector<double> data = tensor_row_major(*p);
        bin.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
        offset += data.size() * sizeof(double);
    }
    if (!bin) throw LoadError("write failed for " + bin_path.string());
    bin.close();

    std::filesystem::path manifest_path = stem;
    manifest_path += ".manifest.json";
    std::ofstream mf(manifest_path);
    if (!mf) throw LoadError("cannot write " + manifest_path.string());
    mf << manifest.dump(2) << '\n';
    if (!mf) throw LoadError("write failed for " + manifest_path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& stem) {
    std::filesystem::path manifest_path = stem;
    manifest_path += ".manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw LoadError("cannot open " + manifest_path.string());
    ordered_json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "nbvae-checkpoint-v1")
        throw LoadError(manifest_path.string() + ": unknown checkpoint format");

    ModelConfig config = config_from_json(manifest.at("config"));
    ModelParams params = ModelParams::init(config);
    auto tensors = params.parameters();

    const auto& listed = manifest.at("tensors");
    if (listed.size() != tensors.size())
        throw LoadError(manifest_path.string() + ": expected " + std::to_string(tensors.size()) +
                        " tensors for this config, manifest lists " + std::to_string(listed.size()));

    std::filesystem::path bin_path = stem;
    bin_path += ".bin";
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw LoadError("cannot open " + bin_path.string());

    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& t = listed[i];
        diff::Parameter* p = tensors[i];
        if (t.at("name").get<std::string>() != p->name)
            throw LoadError(manifest_path.string() + ": tensor " + std::to_string(i) + " is '" +
                            t.at("name").get<std::string>() + "', expected '" + p->name + "'");
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        if (rows != p->value.rows() || cols != p->value.cols())
            throw LoadError(manifest_path.string() + ": tensor '" + p->name + "' has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", config implies " +
                            std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));

        bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        std::vector<double> data(static_cast<std::size_t>(rows * cols));
        bin.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!bin) throw LoadError(bin_path.string() + ": truncated payload for tensor '" + p->name + "'");
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) p->value(r, c) = data[k++];
    }
    return params;
}

std::string checkpoint_digest(const ModelParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const diff::Parameter* p : params.parameters()) {
        const std::vector<double> data = tensor_row_major(*p);
        mix(data.data(), data.size() * sizeof(double));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace nbvae
