#include "dbvae/dense.hpp"

#include <algorithm>
#include <cmath>

namespace dbvae {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Identity: return "identity";
    }
    return "unknown";
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "identity") return Activation::Identity;
    throw ConfigError("unknown activation: " + name);
}

double sigmoid(double t) {
    double s;
    if (t >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-t));
    } else {
        const double e = std::exp(t);
        s = e / (1.0 + e);
    }
    return std::clamp(s, kSigmoidClamp, 1.0 - kSigmoidClamp);
}

namespace {

void apply_activation(Matrix& m, Activation act) {
    switch (act) {
        case Activation::ReLU:
            for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::Sigmoid:
            for (double& v : m.values()) v = sigmoid(v);
            break;
        case Activation::Identity:
            break;
    }
}

// Derivative of the activation recovered from the activation's own output.
// ReLU: 1 where output > 0 (the pre-activation was positive); sigmoid:
// out*(1-out); identity: 1.
double activation_deriv_from_output(double out, Activation act) {
    switch (act) {
        case Activation::ReLU: return out > 0.0 ? 1.0 : 0.0;
        case Activation::Sigmoid: return out * (1.0 - out);
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

Matrix preactivation(const DenseLayer& layer, const Matrix& input) {
    Matrix z = matmul_bt(input, layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double* row = z.data() + i * z.cols();
        for (std::size_t j = 0; j < z.cols(); ++j) row[j] += layer.bias[j];
    }
    return z;
}

DenseBackwardResult backward_from_preact_grad(const DenseLayer& layer,
                                              const Matrix& cached_input,
                                              const Matrix& g) {
    DenseBackwardResult res;
    res.grad_weight = matmul_at(g, cached_input);  // out×in
    res.grad_bias = column_sums(g);
    res.grad_input = matmul(g, layer.weight);  // N×in
    return res;
}

}  // namespace

Matrix dense_forward(const DenseLayer& layer, const Matrix& input) {
    if (input.cols() != layer.in_width()) {
        throw ShapeError("dense_forward: expected input width " +
                         std::to_string(layer.in_width()) + ", got " +
                         std::to_string(input.cols()));
    }
    Matrix z = preactivation(layer, input);
    apply_activation(z, layer.activation);
    return z;
}

DenseBackwardResult dense_backward(const DenseLayer& layer, const Matrix& cached_input,
                                   const Matrix& upstream_grad) {
    Matrix out = dense_forward(layer, cached_input);
    return dense_backward_cached(layer, cached_input, out, upstream_grad);
}

DenseBackwardResult dense_backward_cached(const DenseLayer& layer, const Matrix& cached_input,
                                          const Matrix& cached_output,
                                          const Matrix& upstream_grad) {
    if (cached_input.cols() != layer.in_width()) {
        throw ShapeError("dense_backward: expected input width " +
                         std::to_string(layer.in_width()) + ", got " +
                         std::to_string(cached_input.cols()));
    }
    if (upstream_grad.rows() != cached_input.rows() ||
        upstream_grad.cols() != layer.out_width()) {
        throw ShapeError("dense_backward: expected upstream " +
                         std::to_string(cached_input.rows()) + "x" +
                         std::to_string(layer.out_width()) + ", got " +
                         std::to_string(upstream_grad.rows()) + "x" +
                         std::to_string(upstream_grad.cols()));
    }
    Matrix g = upstream_grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.values()[i] *= activation_deriv_from_output(cached_output.values()[i],
                                                      layer.activation);
    }
    return backward_from_preact_grad(layer, cached_input, g);
}

DenseBackwardResult dense_backward_preact(const DenseLayer& layer, const Matrix& cached_input,
                                          const Matrix& preact_grad) {
    if (preact_grad.rows() != cached_input.rows() ||
        preact_grad.cols() != layer.out_width()) {
        throw ShapeError("dense_backward_preact: upstream shape mismatch");
    }
    return backward_from_preact_grad(layer, cached_input, preact_grad);
}

DenseLayer init_dense(std::size_t in_width, std::size_t out_width, Activation act, Rng& rng) {
    if (in_width == 0 || out_width == 0) {
        throw ConfigError("init_dense: zero layer width");
    }
    DenseLayer layer;
    layer.activation = act;
    layer.weight = Matrix(out_width, in_width);
    const double bound = std::sqrt(6.0 / static_cast<double>(in_width + out_width));
    for (double& v : layer.weight.values()) v = rng.uniform(-bound, bound);
    layer.bias.assign(out_width, 0.0);
    return layer;
}

DenseLayer init_dense(std::size_t in_width, std::size_t out_width, Activation act,
                      std::uint64_t seed) {
    Rng rng(seed);
    return init_dense(in_width, out_width, act, rng);
}

}  // namespace dbvae
