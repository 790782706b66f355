#pragma once

#include <filesystem>
#include <string>

#include "nbvae/models.hpp"

namespace nbvae {

/// Writes `<stem>.manifest.json` (config + tensor names/shapes/offsets) and
/// `<stem>.bin` (row-major little-endian float64 payload). The manifest key
/// order and number formatting are deterministic, so identical parameters
/// produce byte-identical files.
void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params);

/// Loads a checkpoint pair; validates every tensor name and shape against
/// the architecture implied by the embedded ModelConfig.
ModelParams load_checkpoint(const std::filesystem::path& stem);

/// FNV-1a over the payload bytes; stable identity for reports.
std::string checkpoint_digest(const ModelParams& params);

}  // namespace nbvae
