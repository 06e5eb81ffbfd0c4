#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "dbvae/model_io.hpp"
#include "dbvae/rng.hpp"
#include "dbvae/vae.hpp"

using namespace dbvae;

namespace {

Matrix random_unit_batch(std::size_t n, std::size_t f, Rng& rng) {
    Matrix m(n, f);
    for (double& v : m.values()) v = rng.uniform(0.02, 0.98);
    return m;
}

ModelParams zero_params(const VaeArchitecture& arch) {
    ModelParams p = ModelParams::init(arch, 0);
    for (auto& l : p.encoder) {
        for (double& v : l.weight.values()) v = 0.0;
    }
    for (auto& l : p.decoder) {
        for (double& v : l.weight.values()) v = 0.0;
    }
    return p;
}

// Small stack for gradient checks: encoder 8 -> 4 -> (2+2), decoder mirrors.
VaeArchitecture tiny_arch() {
    return VaeArchitecture::downsized(8, 2, {8, 4, 4}, {2, 4, 8});
}

double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("table1 architecture matches the published stack") {
    const VaeArchitecture arch = VaeArchitecture::table1();
    CHECK(arch.encoder_widths ==
          std::vector<std::size_t>{193, 128, 128, 64, 32, 16, 8, 4, 4});
    CHECK(arch.decoder_widths ==
          std::vector<std::size_t>{2, 4, 8, 16, 32, 32, 64, 128, 128, 193});
    CHECK(arch.encoder_widths.size() == 9);
    CHECK(arch.decoder_widths.size() == 10);
    CHECK(arch.latent_dim == 2);
    CHECK(arch.encoder_activation(7) == Activation::ReLU);
    CHECK(arch.encoder_activation(8) == Activation::Identity);
    CHECK(arch.decoder_activation(8) == Activation::ReLU);
    CHECK(arch.decoder_activation(9) == Activation::Sigmoid);
    CHECK_NOTHROW(arch.validate());
}

TEST_CASE("zero-weight encoder maps every input to mu = logvar = 0") {
    const ModelParams p = zero_params(VaeArchitecture::table1());
    Rng rng(1);
    const Matrix x = random_unit_batch(3, 193, rng);
    const EncodeResult enc = encode(p, x);
    CHECK(enc.mu.rows() == 3);
    CHECK(enc.mu.cols() == 2);
    CHECK(enc.logvar.rows() == 3);
    for (double v : enc.mu.values()) CHECK(v == 0.0);
    for (double v : enc.logvar.values()) CHECK(v == 0.0);
}

TEST_CASE("identical input rows encode identically; output shape is N x 2") {
    const ModelParams p = ModelParams::init(VaeArchitecture::table1(), 11);
    Rng rng(2);
    Matrix x(4, 193);
    const Matrix row = random_unit_batch(1, 193, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 193; ++j) x(i, j) = row(0, j);
    }
    const EncodeResult enc = encode(p, x);
    for (std::size_t i = 1; i < 4; ++i) {
        for (std::size_t d = 0; d < 2; ++d) {
            CHECK(enc.mu(i, d) == enc.mu(0, d));
            CHECK(enc.logvar(i, d) == enc.logvar(0, d));
        }
    }
    CHECK_THROWS_AS(encode(p, Matrix(2, 100)), ShapeError);
}

TEST_CASE("reparameterize: zero-variance limit collapses z to mu") {
    Matrix mu(2, 2);
    mu(0, 0) = 0.7;
    mu(1, 1) = -0.3;
    const Matrix logvar(2, 2, -50.0);
    Rng rng(3);
    const Matrix z = reparameterize(mu, logvar, rng);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(std::abs(z.values()[i] - mu.values()[i]) < 1e-10);
    }
}

TEST_CASE("reparameterize sampling statistics match N(0,1) for mu=0, logvar=0") {
    const std::size_t n = 100000;
    Matrix mu(n, 1, 0.0), logvar(n, 1, 0.0);
    Rng rng(4);
    const Matrix z = reparameterize(mu, logvar, rng);
    double mean = 0.0;
    for (double v : z.values()) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : z.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("reparameterize is deterministic per rng seed") {
    Matrix mu(3, 2, 0.5), logvar(3, 2, -1.0);
    Rng a(77), b(77);
    const Matrix za = reparameterize(mu, logvar, a);
    const Matrix zb = reparameterize(mu, logvar, b);
    for (std::size_t i = 0; i < za.size(); ++i) CHECK(za.values()[i] == zb.values()[i]);
}

TEST_CASE("zero-weight decoder outputs exactly 0.5 everywhere; shape N x 193") {
    const ModelParams p = zero_params(VaeArchitecture::table1());
    Matrix z(5, 2);
    z(0, 0) = 1.0;
    z(3, 1) = -2.0;
    const Matrix xhat = decode(p, z);
    CHECK(xhat.rows() == 5);
    CHECK(xhat.cols() == 193);
    for (double v : xhat.values()) CHECK(v == 0.5);
    CHECK_THROWS_AS(decode(p, Matrix(2, 3)), ShapeError);
}

TEST_CASE("reconstructions lie strictly inside (0,1)") {
    const ModelParams p = ModelParams::init(VaeArchitecture::table1(), 5);
    Rng rng(6);
    Matrix z(64, 2);
    for (double& v : z.values()) v = rng.uniform(-50, 50);
    const Matrix xhat = decode(p, z);
    for (double v : xhat.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("recon_loss at xhat = 0.5 equals 193 ln 2 per sample") {
    Rng rng(7);
    const Matrix x = random_unit_batch(4, 193, rng);
    const Matrix xhat(4, 193, 0.5);
    CHECK(std::abs(recon_loss(x, xhat) - 193.0 * std::log(2.0)) < 1e-9);
}

TEST_CASE("recon_loss approaches 0 for perfect reconstruction of binary data") {
    Matrix x(1, 193, 0.0);
    x(0, 0) = 1.0;
    Matrix xhat(1, 193, 1e-12);
    xhat(0, 0) = 1.0 - 1e-12;
    CHECK(recon_loss(x, xhat) < 1e-8);
}

TEST_CASE("recon_loss matches a scalar BCE oracle over a grid") {
    // Independent scalar oracle evaluated pointwise.
    auto scalar_bce = [](double x, double p) {
        return -(x * std::log(p) + (1.0 - x) * std::log(1.0 - p));
    };
    const std::vector<double> xs = {0.0, 0.25, 0.5, 0.75, 1.0};
    const std::vector<double> ps = {0.1, 1.0 / (1.0 + std::exp(1.0)), 0.5, 0.9};
    for (double xv : xs) {
        for (double pv : ps) {
            Matrix x(1, 193, xv), xhat(1, 193, pv);
            double expected = 0.0;
            for (int j = 0; j < 193; ++j) expected += scalar_bce(xv, pv);
            CHECK(rel_err(recon_loss(x, xhat), expected) < 1e-12);
        }
    }
}

TEST_CASE("recon_loss rejects reconstructions outside (0,1)") {
    const Matrix x(1, 193, 0.5);
    Matrix bad(1, 193, 0.5);
    bad(0, 7) = 1.0;
    CHECK_THROWS_AS(recon_loss(x, bad), NumericalError);
}

TEST_CASE("kld closed-form values") {
    // mu = 0, logvar = 0 -> 0.
    CHECK(kld_loss(Matrix(3, 2, 0.0), Matrix(3, 2, 0.0)) == 0.0);

    // mu = (1, 0), logvar = (0, 0) -> 0.5.
    Matrix mu(1, 2, 0.0);
    mu(0, 0) = 1.0;
    CHECK(std::abs(kld_loss(mu, Matrix(1, 2, 0.0)) - 0.5) < 1e-12);

    Matrix bad(1, 2, std::nan(""));
    CHECK_THROWS_AS(kld_loss(mu, bad), NumericalError);
}

TEST_CASE("kld against a Monte-Carlo estimate for mu=(1,0), logvar=0") {
    // MC oracle: E_q[log q(z) - log p(z)] with q = N(mu, I).
    Rng rng(8);
    const double mu0 = 1.0;
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z0 = mu0 + rng.gaussian();
        const double z1 = rng.gaussian();
        const double log_q = -0.5 * ((z0 - mu0) * (z0 - mu0) + z1 * z1);
        const double log_p = -0.5 * (z0 * z0 + z1 * z1);
        acc += log_q - log_p;
    }
    acc /= n;
    Matrix mu(1, 2, 0.0);
    mu(0, 0) = mu0;
    CHECK(std::abs(kld_loss(mu, Matrix(1, 2, 0.0)) - acc) < 0.01);
}

TEST_CASE("kld is non-negative over random posteriors") {
    Rng rng(9);
    for (int trial = 0; trial < 10000; ++trial) {
        Matrix mu(1, 2), logvar(1, 2);
        for (double& v : mu.values()) v = rng.uniform(-3, 3);
        for (double& v : logvar.values()) v = rng.uniform(-4, 3);
        CHECK(kld_loss(mu, logvar) >= 0.0);
    }
}

TEST_CASE("kld is zero only at the prior") {
    Rng rng(10);
    for (int trial = 0; trial < 1000; ++trial) {
        Matrix mu(1, 2), logvar(1, 2);
        for (double& v : mu.values()) v = rng.uniform(-2, 2);
        for (double& v : logvar.values()) v = rng.uniform(-2, 2);
        const double kld = kld_loss(mu, logvar);
        const bool at_prior = mu(0, 0) == 0 && mu(0, 1) == 0 && logvar(0, 0) == 0 &&
                              logvar(0, 1) == 0;
        if (!at_prior && (std::abs(mu(0, 0)) > 1e-3 || std::abs(logvar(0, 0)) > 1e-3)) {
            CHECK(kld > 1e-12);
        }
    }
}

TEST_CASE("composite gradients match finite differences across the (beta, gamma) grid") {
    const VaeArchitecture arch = tiny_arch();
    Rng rng(123);
    const Matrix x = random_unit_batch(4, 8, rng);
    const Matrix noise = draw_standard_noise(4, 2, rng);

    LabelledBatch labelled;
    labelled.x = random_unit_batch(6, 8, rng);
    labelled.labels = {0, 0, 1, 1, 2, 2};

    for (double beta : {0.0, 0.5, 1.0}) {
        for (double gamma : {0.0, 0.1}) {
            ModelParams params = ModelParams::init(arch, 321);
            const LabelledBatch* lb = gamma > 0 ? &labelled : nullptr;
            const auto [losses, grads] =
                composite_forward_backward(params, x, beta, gamma, lb, noise);

            auto objective = [&]() {
                const CompositeLosses l = composite_forward(params, x, beta, gamma, lb, noise);
                return l.total(beta, gamma);
            };

            double max_rel = 0.0;
            auto check_block = [&](Matrix& w, const Matrix& g) {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    double& p = w.values()[i];
                    const double saved = p;
                    const double h = 1e-5;
                    p = saved + h;
                    const double up = objective();
                    p = saved - h;
                    const double down = objective();
                    p = saved;
                    const double fd = (up - down) / (2 * h);
                    max_rel = std::max(max_rel, rel_err(fd, g.values()[i]));
                }
            };
            for (std::size_t li = 0; li < params.encoder.size(); ++li) {
                check_block(params.encoder[li].weight, grads.encoder[li].weight);
            }
            for (std::size_t li = 0; li < params.decoder.size(); ++li) {
                check_block(params.decoder[li].weight, grads.decoder[li].weight);
            }
            CAPTURE(beta);
            CAPTURE(gamma);
            CHECK(max_rel < 1e-4);
        }
    }
}

TEST_CASE("beta=0, gamma=0 gradient equals the pure reconstruction gradient") {
    const VaeArchitecture arch = tiny_arch();
    Rng rng(55);
    const Matrix x = random_unit_batch(4, 8, rng);
    const Matrix noise = draw_standard_noise(4, 2, rng);
    ModelParams params = ModelParams::init(arch, 77);

    const auto [losses, grads] =
        composite_forward_backward(params, x, 0.0, 0.0, nullptr, noise);
    auto rec_only = [&]() {
        return composite_forward(params, x, 0.0, 0.0, nullptr, noise).rec;
    };
    double max_rel = 0.0;
    for (std::size_t li = 0; li < params.decoder.size(); ++li) {
        Matrix& w = params.decoder[li].weight;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w.values()[i];
            const double h = 1e-5;
            w.values()[i] = saved + h;
            const double up = rec_only();
            w.values()[i] = saved - h;
            const double down = rec_only();
            w.values()[i] = saved;
            max_rel = std::max(max_rel,
                               rel_err((up - down) / (2 * h), grads.decoder[li].weight.values()[i]));
        }
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("gamma=0 reports L_cls = 0 and ignores the labelled batch") {
    const VaeArchitecture arch = tiny_arch();
    Rng rng(66);
    const Matrix x = random_unit_batch(4, 8, rng);
    const Matrix noise = draw_standard_noise(4, 2, rng);
    const ModelParams params = ModelParams::init(arch, 88);
    const CompositeLosses l = composite_forward(params, x, 0.5, 0.0, nullptr, noise);
    CHECK(l.cls == 0.0);
}

TEST_CASE("train_step with zero-like gradients leaves finite params and reports pre-step losses") {
    const VaeArchitecture arch = tiny_arch();
    ModelParams params = ModelParams::init(arch, 99);
    AdamState adam = AdamState::init({}, param_block_sizes(params));
    Rng rng(111), data_rng(11);
    const Matrix x = random_unit_batch(8, 8, data_rng);
    const CompositeLosses before = train_step(params, adam, x, 0.5, 0.0, nullptr, rng);
    CHECK(std::isfinite(before.rec));
    CHECK(std::isfinite(before.reg));
    CHECK(adam.step == 1);
    for (const auto& l : params.encoder) CHECK(l.weight.all_finite());
    CHECK_THROWS_AS(train_step(params, adam, x, -0.1, 0.0, nullptr, rng), ConfigError);
}

TEST_CASE("a full epoch is bit-reproducible under fixed seeds") {
    const VaeArchitecture arch = tiny_arch();
    Rng data_rng(13);
    const Matrix x = random_unit_batch(32, 8, data_rng);

    auto run_epoch = [&]() {
        ModelParams params = ModelParams::init(arch, 500);
        AdamState adam = AdamState::init({}, param_block_sizes(params));
        Rng rng(42);
        for (int step = 0; step < 4; ++step) {
            Matrix batch(8, 8);
            for (std::size_t i = 0; i < 8; ++i) {
                for (std::size_t j = 0; j < 8; ++j) batch(i, j) = x(step * 8 + i, j);
            }
            train_step(params, adam, batch, 0.3, 0.0, nullptr, rng);
        }
        return params;
    };
    const ModelParams a = run_epoch();
    const ModelParams b = run_epoch();
    for (std::size_t li = 0; li < a.encoder.size(); ++li) {
        for (std::size_t i = 0; i < a.encoder[li].weight.size(); ++i) {
            CHECK(a.encoder[li].weight.values()[i] == b.encoder[li].weight.values()[i]);
        }
    }
}

TEST_CASE("model container round-trips bit-exactly with metadata") {
    const VaeArchitecture arch = VaeArchitecture::table1();
    const ModelParams params = ModelParams::init(arch, 2024);
    nlohmann::json meta;
    meta["seed"] = 2024;
    meta["training"] = {{"epochs", 10}};
    const std::string path = "/tmp/dbvae_test_model.dbv";
    save_model(path, params, meta);
    const LoadedModel loaded = load_model(path);
    CHECK(loaded.header.at("seed") == 2024);
    CHECK(loaded.header.at("encoder_widths").get<std::vector<std::size_t>>() ==
          arch.encoder_widths);
    REQUIRE(loaded.params.encoder.size() == params.encoder.size());
    for (std::size_t li = 0; li < params.encoder.size(); ++li) {
        for (std::size_t i = 0; i < params.encoder[li].weight.size(); ++i) {
            CHECK(loaded.params.encoder[li].weight.values()[i] ==
                  params.encoder[li].weight.values()[i]);
        }
        for (std::size_t i = 0; i < params.encoder[li].bias.size(); ++i) {
            CHECK(loaded.params.encoder[li].bias[i] == params.encoder[li].bias[i]);
        }
    }
    // Magic bytes are the first four bytes of the file.
    FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f);
    char magic[4];
    REQUIRE(std::fread(magic, 1, 4, f) == 4);
    std::fclose(f);
    CHECK(std::string(magic, 4) == "DBV1");
    std::filesystem::remove(path);
}
