#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nbvae/models.hpp"
#include "nbvae/training.hpp"

namespace nbvae::cli {

enum class DataFormat { Bow, Binary, Multilabel };

DataFormat format_from_string(const std::string& s);
std::string format_to_string(DataFormat f);

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Fully resolved run configuration: JSON with explicit defaults, unknown
/// keys rejected. The resolved form is written next to every run's outputs
/// so a run is reproducible from that file alone.
struct RunConfig {
    std::string variant = "nbvae";
    DataFormat format = DataFormat::Bow;
    std::filesystem::path train_path;
    std::filesystem::path validation_path;
    std::filesystem::path test_path;  // optional

    std::size_t latent_dim = 32;
    std::vector<std::size_t> encoder_layers = {128, 64};
    std::vector<std::size_t> decoder_layers = {64};
    std::uint64_t model_seed = 1;

    TrainConfig train;

    std::vector<std::size_t> r_values = {1, 5, 10};
    double heldout_fraction = 0.2;
    double fold_fraction = 0.8;
    std::uint64_t eval_seed = 1;
    std::vector<std::string> metrics;  // defaulted per format when empty

    std::filesystem::path output_dir = "run";
    int threads = 1;

    /// Parses + resolves defaults. Unknown keys and malformed values throw
    /// ConfigError naming the offending field.
    static RunConfig load(const std::filesystem::path& path);

    /// Paths must exist, metrics must match the data format.
    void validate() const;

    void write_resolved(const std::filesystem::path& path) const;

    std::vector<std::string> default_metrics() const;
};

}  // namespace nbvae::cli
