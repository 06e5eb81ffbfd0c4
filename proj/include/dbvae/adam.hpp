#pragma once

#include <span>
#include <string>
#include <vector>

#include "dbvae/errors.hpp"

namespace dbvae {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First/second moment accumulators for one parameter block.
struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    AdamConfig config;
    long step = 0;  // incremented exactly once per adam_step
    std::vector<AdamMoments> blocks;

    static AdamState init(const AdamConfig& cfg, const std::vector<std::size_t>& block_sizes);
};

// Standard bias-corrected Adam update applied in place over all blocks.
// block_names are used to identify the offending block in error messages.
void adam_step(std::vector<std::span<double>> params,
               const std::vector<std::span<const double>>& grads, AdamState& state,
               const std::vector<std::string>& block_names);

}  // namespace dbvae
