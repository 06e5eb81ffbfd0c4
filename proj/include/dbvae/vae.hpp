#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dbvae/adam.hpp"
#include "dbvae/dense.hpp"
#include "dbvae/matrix.hpp"
#include "dbvae/rng.hpp"

namespace dbvae {

// Encoder/decoder layout. Widths are per-layer output widths: the default
// encoder runs 9 layers (193,128,128,64,32,16,8,4,4) where the last layer
// emits mu and log-variance side by side, and the decoder runs 10 layers
// (2,4,8,16,32,32,64,128,128,193) with a sigmoid output. Encoder layers are
// ReLU except the identity head; decoder layers are ReLU except the sigmoid
// output.
struct VaeArchitecture {
    std::size_t input_dim = 193;
    std::size_t latent_dim = 2;
    std::vector<std::size_t> encoder_widths;
    std::vector<std::size_t> decoder_widths;

    static VaeArchitecture table1();
    // Small stacks for gradient-check tests, e.g. encoder {8,4,4} on 8 inputs.
    static VaeArchitecture downsized(std::size_t input_dim, std::size_t latent_dim,
                                     std::vector<std::size_t> encoder_widths,
                                     std::vector<std::size_t> decoder_widths);

    void validate() const;
    Activation encoder_activation(std::size_t layer) const;
    Activation decoder_activation(std::size_t layer) const;
};

struct ModelParams {
    VaeArchitecture arch;
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;

    static ModelParams init(const VaeArchitecture& arch, std::uint64_t seed);
};

// Per-layer gradient blocks aligned with ModelParams.
struct GradPack {
    std::vector<LayerGrads> encoder;
    std::vector<LayerGrads> decoder;

    static GradPack zeros_like(const ModelParams& params);
};

struct EncodeResult {
    Matrix mu;      // N × latent
    Matrix logvar;  // N × latent
};

EncodeResult encode(const ModelParams& params, const Matrix& batch);

// z = mu + exp(logvar/2) ⊙ noise, noise ~ N(0, I). Gradients flow to mu and
// logvar only.
Matrix reparameterize(const Matrix& mu, const Matrix& logvar, Rng& rng);
Matrix reparameterize_with_noise(const Matrix& mu, const Matrix& logvar,
                                 const Matrix& noise);
Matrix draw_standard_noise(std::size_t rows, std::size_t cols, Rng& rng);

Matrix decode(const ModelParams& params, const Matrix& z);

enum class ReconLossKind { BernoulliCrossEntropy, MeanSquaredError };

// Reconstruction loss summed over features, averaged over the batch.
double recon_loss(const Matrix& x, const Matrix& xhat,
                  ReconLossKind kind = ReconLossKind::BernoulliCrossEntropy);

// KL divergence to the standard-normal prior, summed over latent dims,
// averaged over the batch: -0.5 * sum(1 + logvar - mu^2 - exp(logvar)).
double kld_loss(const Matrix& mu, const Matrix& logvar);

struct LabelledBatch {
    Matrix x;                 // N_l × input_dim
    std::vector<int> labels;  // N_l class ids
};

struct CompositeLosses {
    double rec = 0.0;
    double reg = 0.0;
    double cls = 0.0;
    double total(double beta, double gamma) const { return rec + beta * reg + gamma * cls; }
};

struct TrainOptions {
    ReconLossKind recon = ReconLossKind::BernoulliCrossEntropy;
    // 1.0 keeps the sum-over-features convention; 1/193 turns the
    // reconstruction term into a per-feature mean (changes the beta
    // trajectory scale, not the method).
    double recon_scale = 1.0;
    double cls_epsilon = 1e-8;
    long epoch = -1;  // context for divergence diagnostics
    long step = -1;
};

// Pure composite objective evaluation with injected reparameterization noise;
// the finite-difference oracle perturbs parameters around this.
CompositeLosses composite_forward(const ModelParams& params, const Matrix& x, double beta,
                                  double gamma, const LabelledBatch* labelled,
                                  const Matrix& noise,
                                  const TrainOptions& opts = {});

// Losses plus analytic gradients of rec + beta*reg + gamma*cls.
std::pair<CompositeLosses, GradPack> composite_forward_backward(
    const ModelParams& params, const Matrix& x, double beta, double gamma,
    const LabelledBatch* labelled, const Matrix& noise, const TrainOptions& opts = {});

// One Adam step on the composite objective. Returns the losses evaluated on
// this batch before the update. Throws TrainingDiverged on non-finite loss.
CompositeLosses train_step(ModelParams& params, AdamState& adam, const Matrix& x,
                           double beta, double gamma, const LabelledBatch* labelled,
                           Rng& rng, const TrainOptions& opts = {});

// Adam plumbing: one block per weight/bias, encoder layers then decoder.
std::vector<std::size_t> param_block_sizes(const ModelParams& params);
std::vector<std::string> param_block_names(const ModelParams& params);
void apply_adam(ModelParams& params, const GradPack& grads, AdamState& state);

}  // namespace dbvae
