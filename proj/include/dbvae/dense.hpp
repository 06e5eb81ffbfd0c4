#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbvae/matrix.hpp"
#include "dbvae/rng.hpp"

namespace dbvae {

enum class Activation { ReLU, Sigmoid, Identity };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Fully connected layer: output = act(input · weightᵀ + bias).
// weight is out×in, bias has length out.
struct DenseLayer {
    Matrix weight;
    std::vector<double> bias;
    Activation activation = Activation::Identity;

    std::size_t in_width() const { return weight.cols(); }
    std::size_t out_width() const { return weight.rows(); }
};

// Gradient block shaped like a DenseLayer's parameters.
struct LayerGrads {
    Matrix weight;
    std::vector<double> bias;
};

Matrix dense_forward(const DenseLayer& layer, const Matrix& input);

struct DenseBackwardResult {
    Matrix grad_weight;
    std::vector<double> grad_bias;
    Matrix grad_input;
};

// Analytic gradients through the layer. cached_input must be the exact input
// of the matching forward call; upstream_grad is dLoss/d(output).
DenseBackwardResult dense_backward(const DenseLayer& layer, const Matrix& cached_input,
                                   const Matrix& upstream_grad);

// Same result, but recovers the activation derivative from the cached forward
// output instead of recomputing the pre-activation (saves one GEMM per layer).
DenseBackwardResult dense_backward_cached(const DenseLayer& layer, const Matrix& cached_input,
                                          const Matrix& cached_output,
                                          const Matrix& upstream_grad);

// Variant for callers that already hold dLoss/d(pre-activation), e.g. the
// fused cross-entropy/sigmoid path.
DenseBackwardResult dense_backward_preact(const DenseLayer& layer, const Matrix& cached_input,
                                          const Matrix& preact_grad);

// Zero-mean uniform init scaled by sqrt(6/(fan_in+fan_out)); zero biases.
// Deterministic per seed.
DenseLayer init_dense(std::size_t in_width, std::size_t out_width, Activation act,
                      std::uint64_t seed);
DenseLayer init_dense(std::size_t in_width, std::size_t out_width, Activation act, Rng& rng);

// Sigmoid clamped to keep outputs strictly inside (0,1) even in saturation.
double sigmoid(double t);
inline constexpr double kSigmoidClamp = 1e-12;

}  // namespace dbvae
