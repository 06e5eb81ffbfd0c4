#pragma once

#include <string>

#include <json.hpp>

#include "dbvae/vae.hpp"

namespace dbvae {

// Weights container: magic `DBV1`, 4-byte little-endian header length, JSON
// header (widths, activations, seed, training metadata), then all parameters
// as little-endian doubles in layer order (weights row-major, then bias,
// encoder layers then decoder layers).
void save_model(const std::string& path, const ModelParams& params,
                const nlohmann::json& metadata);

struct LoadedModel {
    ModelParams params;
    nlohmann::json header;
};

LoadedModel load_model(const std::string& path);

}  // namespace dbvae
