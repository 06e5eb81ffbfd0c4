#include "dbvae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dbvae/clustering.hpp"

namespace dbvae {

VaeArchitecture VaeArchitecture::table1() {
    VaeArchitecture arch;
    arch.input_dim = 193;
    arch.latent_dim = 2;
    arch.encoder_widths = {193, 128, 128, 64, 32, 16, 8, 4, 4};
    arch.decoder_widths = {2, 4, 8, 16, 32, 32, 64, 128, 128, 193};
    return arch;
}

VaeArchitecture VaeArchitecture::downsized(std::size_t input_dim, std::size_t latent_dim,
                                           std::vector<std::size_t> encoder_widths,
                                           std::vector<std::size_t> decoder_widths) {
    VaeArchitecture arch;
    arch.input_dim = input_dim;
    arch.latent_dim = latent_dim;
    arch.encoder_widths = std::move(encoder_widths);
    arch.decoder_widths = std::move(decoder_widths);
    arch.validate();
    return arch;
}

void VaeArchitecture::validate() const {
    if (encoder_widths.empty() || decoder_widths.empty()) {
        throw ConfigError("architecture: empty layer stack");
    }
    if (encoder_widths.back() != 2 * latent_dim) {
        throw ConfigError("architecture: encoder head must emit 2*latent_dim values");
    }
    if (decoder_widths.back() != input_dim) {
        throw ConfigError("architecture: decoder output width must equal input_dim");
    }
    for (std::size_t w : encoder_widths) {
        if (w == 0) throw ConfigError("architecture: zero encoder width");
    }
    for (std::size_t w : decoder_widths) {
        if (w == 0) throw ConfigError("architecture: zero decoder width");
    }
}

Activation VaeArchitecture::encoder_activation(std::size_t layer) const {
    return layer + 1 == encoder_widths.size() ? Activation::Identity : Activation::ReLU;
}

Activation VaeArchitecture::decoder_activation(std::size_t layer) const {
    return layer + 1 == decoder_widths.size() ? Activation::Sigmoid : Activation::ReLU;
}

ModelParams ModelParams::init(const VaeArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    std::size_t in = arch.input_dim;
    for (std::size_t i = 0; i < arch.encoder_widths.size(); ++i) {
        Rng rng = Rng::derive(seed, i);
        p.encoder.push_back(
            init_dense(in, arch.encoder_widths[i], arch.encoder_activation(i), rng));
        in = arch.encoder_widths[i];
    }
    in = arch.latent_dim;
    for (std::size_t i = 0; i < arch.decoder_widths.size(); ++i) {
        Rng rng = Rng::derive(seed, 1000 + i);
        p.decoder.push_back(
            init_dense(in, arch.decoder_widths[i], arch.decoder_activation(i), rng));
        in = arch.decoder_widths[i];
    }
    return p;
}

GradPack GradPack::zeros_like(const ModelParams& params) {
    GradPack g;
    for (const DenseLayer& l : params.encoder) {
        g.encoder.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                             std::vector<double>(l.bias.size(), 0.0)});
    }
    for (const DenseLayer& l : params.decoder) {
        g.decoder.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                             std::vector<double>(l.bias.size(), 0.0)});
    }
    return g;
}

namespace {

// acts[0] = stack input, acts[i+1] = output of layer i.
struct StackCache {
    std::vector<Matrix> acts;
};

Matrix stack_forward(const std::vector<DenseLayer>& layers, const Matrix& input,
                     StackCache* cache) {
    Matrix cur = input;
    if (cache) {
        cache->acts.clear();
        cache->acts.push_back(cur);
    }
    for (const DenseLayer& layer : layers) {
        cur = dense_forward(layer, cur);
        if (cache) cache->acts.push_back(cur);
    }
    return cur;
}

// Backpropagates `upstream` through the stack, accumulating parameter
// gradients into `grads`. When upstream_is_preact is set, `upstream` is the
// gradient at the last layer's pre-activation (fused loss paths).
Matrix stack_backward(const std::vector<DenseLayer>& layers, const StackCache& cache,
                      Matrix upstream, bool upstream_is_preact,
                      std::vector<LayerGrads>& grads) {
    for (std::size_t li = layers.size(); li-- > 0;) {
        const DenseLayer& layer = layers[li];
        DenseBackwardResult res =
            (li + 1 == layers.size() && upstream_is_preact)
                ? dense_backward_preact(layer, cache.acts[li], upstream)
                : dense_backward_cached(layer, cache.acts[li], cache.acts[li + 1], upstream);
        for (std::size_t i = 0; i < res.grad_weight.size(); ++i) {
            grads[li].weight.values()[i] += res.grad_weight.values()[i];
        }
        for (std::size_t i = 0; i < res.grad_bias.size(); ++i) {
            grads[li].bias[i] += res.grad_bias[i];
        }
        upstream = std::move(res.grad_input);
    }
    return upstream;
}

void split_latent(const Matrix& head, std::size_t latent_dim, Matrix& mu, Matrix& logvar) {
    mu = Matrix(head.rows(), latent_dim);
    logvar = Matrix(head.rows(), latent_dim);
    for (std::size_t i = 0; i < head.rows(); ++i) {
        for (std::size_t d = 0; d < latent_dim; ++d) {
            mu(i, d) = head(i, d);
            logvar(i, d) = head(i, latent_dim + d);
        }
    }
}

Matrix join_latent_grads(const Matrix& dmu, const Matrix& dlogvar) {
    Matrix out(dmu.rows(), dmu.cols() + dlogvar.cols());
    for (std::size_t i = 0; i < dmu.rows(); ++i) {
        for (std::size_t d = 0; d < dmu.cols(); ++d) {
            out(i, d) = dmu(i, d);
            out(i, dmu.cols() + d) = dlogvar(i, d);
        }
    }
    return out;
}

}  // namespace

EncodeResult encode(const ModelParams& params, const Matrix& batch) {
    if (batch.cols() != params.arch.input_dim) {
        throw ShapeError("encode: expected input width " +
                         std::to_string(params.arch.input_dim) + ", got " +
                         std::to_string(batch.cols()));
    }
    const Matrix head = stack_forward(params.encoder, batch, nullptr);
    EncodeResult res;
    split_latent(head, params.arch.latent_dim, res.mu, res.logvar);
    return res;
}

Matrix draw_standard_noise(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix noise(rows, cols);
    for (double& v : noise.values()) v = rng.gaussian();
    return noise;
}

Matrix reparameterize_with_noise(const Matrix& mu, const Matrix& logvar,
                                 const Matrix& noise) {
    if (!mu.same_shape(logvar) || !mu.same_shape(noise)) {
        throw ShapeError("reparameterize: mu/logvar/noise shapes disagree");
    }
    Matrix z = mu;
    for (std::size_t i = 0; i < z.size(); ++i) {
        z.values()[i] += std::exp(0.5 * logvar.values()[i]) * noise.values()[i];
    }
    return z;
}

Matrix reparameterize(const Matrix& mu, const Matrix& logvar, Rng& rng) {
    return reparameterize_with_noise(mu, logvar, draw_standard_noise(mu.rows(), mu.cols(), rng));
}

Matrix decode(const ModelParams& params, const Matrix& z) {
    if (z.cols() != params.arch.latent_dim) {
        throw ShapeError("decode: expected latent width " +
                         std::to_string(params.arch.latent_dim) + ", got " +
                         std::to_string(z.cols()));
    }
    return stack_forward(params.decoder, z, nullptr);
}

double recon_loss(const Matrix& x, const Matrix& xhat, ReconLossKind kind) {
    if (!x.same_shape(xhat)) throw ShapeError("recon_loss: shapes disagree");
    const std::size_t n = x.rows();
    double total = 0.0;
    if (kind == ReconLossKind::BernoulliCrossEntropy) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double xv = x.values()[i];
            const double pv = xhat.values()[i];
            if (!(pv > 0.0 && pv < 1.0)) {
                throw NumericalError("recon_loss: reconstruction outside (0,1)");
            }
            total -= xv * std::log(pv) + (1.0 - xv) * std::log(1.0 - pv);
        }
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = xhat.values()[i] - x.values()[i];
            total += d * d;
        }
    }
    return total / static_cast<double>(n);
}

double kld_loss(const Matrix& mu, const Matrix& logvar) {
    if (!mu.same_shape(logvar)) throw ShapeError("kld_loss: shapes disagree");
    if (!logvar.all_finite() || !mu.all_finite()) {
        throw NumericalError("kld_loss: non-finite posterior parameters");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.values()[i];
        const double lv = logvar.values()[i];
        total += -0.5 * (1.0 + lv - m * m - std::exp(lv));
    }
    return total / static_cast<double>(mu.rows());
}

namespace {

struct ForwardState {
    StackCache enc_cache;
    StackCache dec_cache;
    StackCache enc_cache_labelled;
    Matrix mu, logvar, z, xhat;
    Matrix mu_l;  // labelled latent means
    Matrix cls_grad_mu;
    CompositeLosses losses;
};

ForwardState run_forward(const ModelParams& params, const Matrix& x, double gamma,
                         const LabelledBatch* labelled, const Matrix& noise,
                         const TrainOptions& opts, bool with_caches) {
    ForwardState s;
    const Matrix head =
        stack_forward(params.encoder, x, with_caches ? &s.enc_cache : nullptr);
    split_latent(head, params.arch.latent_dim, s.mu, s.logvar);
    s.z = reparameterize_with_noise(s.mu, s.logvar, noise);
    s.xhat = stack_forward(params.decoder, s.z, with_caches ? &s.dec_cache : nullptr);
    s.losses.rec = opts.recon_scale * recon_loss(x, s.xhat, opts.recon);
    s.losses.reg = kld_loss(s.mu, s.logvar);
    if (gamma > 0.0) {
        if (!labelled) {
            throw ConfigError("composite objective: gamma > 0 requires a labelled batch");
        }
        const Matrix head_l = stack_forward(params.encoder, labelled->x,
                                            with_caches ? &s.enc_cache_labelled : nullptr);
        Matrix logvar_l;
        split_latent(head_l, params.arch.latent_dim, s.mu_l, logvar_l);
        auto [parts, grad] =
            clustering_loss_with_grad(s.mu_l, labelled->labels, opts.cls_epsilon);
        s.losses.cls = parts.value;
        s.cls_grad_mu = std::move(grad);
    }
    return s;
}

}  // namespace

CompositeLosses composite_forward(const ModelParams& params, const Matrix& x, double beta,
                                  double gamma, const LabelledBatch* labelled,
                                  const Matrix& noise, const TrainOptions& opts) {
    (void)beta;
    return run_forward(params, x, gamma, labelled, noise, opts, false).losses;
}

std::pair<CompositeLosses, GradPack> composite_forward_backward(
    const ModelParams& params, const Matrix& x, double beta, double gamma,
    const LabelledBatch* labelled, const Matrix& noise, const TrainOptions& opts) {
    ForwardState s = run_forward(params, x, gamma, labelled, noise, opts, true);
    GradPack grads = GradPack::zeros_like(params);

    const double inv_n = opts.recon_scale / static_cast<double>(x.rows());
    Matrix dz;
    if (opts.recon == ReconLossKind::BernoulliCrossEntropy) {
        // Fused cross-entropy/sigmoid: gradient at the output pre-activation
        // is (xhat - x)/N, which stays finite even in saturation.
        Matrix up(x.rows(), x.cols());
        for (std::size_t i = 0; i < up.size(); ++i) {
            up.values()[i] = (s.xhat.values()[i] - x.values()[i]) * inv_n;
        }
        dz = stack_backward(params.decoder, s.dec_cache, std::move(up), true, grads.decoder);
    } else {
        Matrix up(x.rows(), x.cols());
        for (std::size_t i = 0; i < up.size(); ++i) {
            up.values()[i] = 2.0 * (s.xhat.values()[i] - x.values()[i]) * inv_n;
        }
        dz = stack_backward(params.decoder, s.dec_cache, std::move(up), false, grads.decoder);
    }

    // Reparameterization chain plus the KL term (which carries no recon scale).
    const double kld_inv_n = 1.0 / static_cast<double>(x.rows());
    Matrix dmu = dz;
    Matrix dlogvar(dz.rows(), dz.cols());
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dlogvar.values()[i] = dz.values()[i] * 0.5 * (s.z.values()[i] - s.mu.values()[i]);
    }
    for (std::size_t i = 0; i < dmu.size(); ++i) {
        dmu.values()[i] += beta * s.mu.values()[i] * kld_inv_n;
        dlogvar.values()[i] +=
            beta * (std::exp(s.logvar.values()[i]) - 1.0) * 0.5 * kld_inv_n;
    }
    stack_backward(params.encoder, s.enc_cache, join_latent_grads(dmu, dlogvar), false,
                   grads.encoder);

    if (gamma > 0.0) {
        Matrix dmu_l = scale(s.cls_grad_mu, gamma);
        Matrix zeros(dmu_l.rows(), dmu_l.cols());
        stack_backward(params.encoder, s.enc_cache_labelled, join_latent_grads(dmu_l, zeros),
                       false, grads.encoder);
    }
    return {s.losses, std::move(grads)};
}

CompositeLosses train_step(ModelParams& params, AdamState& adam, const Matrix& x,
                           double beta, double gamma, const LabelledBatch* labelled,
                           Rng& rng, const TrainOptions& opts) {
    if (beta < 0.0 || gamma < 0.0) {
        throw ConfigError("train_step: beta and gamma must be non-negative");
    }
    const Matrix noise = draw_standard_noise(x.rows(), params.arch.latent_dim, rng);
    auto [losses, grads] = composite_forward_backward(params, x, beta, gamma, labelled,
                                                      noise, opts);
    if (!std::isfinite(losses.rec) || !std::isfinite(losses.reg) ||
        !std::isfinite(losses.cls)) {
        throw TrainingDiverged(
            "train_step: non-finite loss at epoch " + std::to_string(opts.epoch) +
                ", step " + std::to_string(opts.step),
            opts.epoch, opts.step, std::isfinite(losses.rec) ? losses.rec : 0.0,
            std::isfinite(losses.reg) ? losses.reg : 0.0);
    }
    apply_adam(params, grads, adam);
    return losses;
}

std::vector<std::size_t> param_block_sizes(const ModelParams& params) {
    std::vector<std::size_t> sizes;
    for (const DenseLayer& l : params.encoder) {
        sizes.push_back(l.weight.size());
        sizes.push_back(l.bias.size());
    }
    for (const DenseLayer& l : params.decoder) {
        sizes.push_back(l.weight.size());
        sizes.push_back(l.bias.size());
    }
    return sizes;
}

std::vector<std::string> param_block_names(const ModelParams& params) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < params.encoder.size(); ++i) {
        names.push_back("encoder.layer" + std::to_string(i + 1) + ".weight");
        names.push_back("encoder.layer" + std::to_string(i + 1) + ".bias");
    }
    for (std::size_t i = 0; i < params.decoder.size(); ++i) {
        names.push_back("decoder.layer" + std::to_string(i + 1) + ".weight");
        names.push_back("decoder.layer" + std::to_string(i + 1) + ".bias");
    }
    return names;
}

void apply_adam(ModelParams& params, const GradPack& grads, AdamState& state) {
    std::vector<std::span<double>> p;
    std::vector<std::span<const double>> g;
    for (std::size_t i = 0; i < params.encoder.size(); ++i) {
        p.emplace_back(params.encoder[i].weight.values());
        p.emplace_back(params.encoder[i].bias);
        g.emplace_back(grads.encoder[i].weight.values());
        g.emplace_back(grads.encoder[i].bias);
    }
    for (std::size_t i = 0; i < params.decoder.size(); ++i) {
        p.emplace_back(params.decoder[i].weight.values());
        p.emplace_back(params.decoder[i].bias);
        g.emplace_back(grads.decoder[i].weight.values());
        g.emplace_back(grads.decoder[i].bias);
    }
    adam_step(std::move(p), g, state, param_block_names(params));
}

}  // namespace dbvae
