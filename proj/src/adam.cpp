#include "dbvae/adam.hpp"

#include <cmath>

namespace dbvae {

AdamState AdamState::init(const AdamConfig& cfg, const std::vector<std::size_t>& block_sizes) {
    AdamState state;
    state.config = cfg;
    state.blocks.resize(block_sizes.size());
    for (std::size_t i = 0; i < block_sizes.size(); ++i) {
        state.blocks[i].m.assign(block_sizes[i], 0.0);
        state.blocks[i].v.assign(block_sizes[i], 0.0);
    }
    return state;
}

void adam_step(std::vector<std::span<double>> params,
               const std::vector<std::span<const double>>& grads, AdamState& state,
               const std::vector<std::string>& block_names) {
    if (params.size() != grads.size() || params.size() != state.blocks.size()) {
        throw ShapeError("adam_step: block count mismatch");
    }
    for (std::size_t b = 0; b < grads.size(); ++b) {
        if (grads[b].size() != params[b].size() ||
            grads[b].size() != state.blocks[b].m.size()) {
            throw ShapeError("adam_step: size mismatch in block '" +
                             (b < block_names.size() ? block_names[b] : std::to_string(b)) +
                             "'");
        }
        for (double g : grads[b]) {
            if (!std::isfinite(g)) {
                throw NumericalError(
                    "adam_step: non-finite gradient in block '" +
                    (b < block_names.size() ? block_names[b] : std::to_string(b)) + "'");
            }
        }
    }

    state.step += 1;
    const AdamConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

    for (std::size_t b = 0; b < params.size(); ++b) {
        AdamMoments& mom = state.blocks[b];
        double* p = params[b].data();
        const double* g = grads[b].data();
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * g[i];
            mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

}  // namespace dbvae
