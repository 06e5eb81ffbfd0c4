#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dbvae/baselines.hpp"
#include "dbvae/rng.hpp"

using namespace dbvae;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = scale * rng.gaussian();
    return m;
}

// Independent eigen-decomposition oracle: power iteration with deflation on
// the covariance matrix, written against plain vectors.
std::vector<std::vector<double>> power_iteration_components(const Matrix& data,
                                                            std::size_t count) {
    const std::size_t n = data.rows(), f = data.cols();
    std::vector<double> mean(f, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) mean[j] += data(i, j) / static_cast<double>(n);
    }
    std::vector<std::vector<double>> cov(f, std::vector<double>(f, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < f; ++a) {
            for (std::size_t b = 0; b < f; ++b) {
                cov[a][b] += (data(i, a) - mean[a]) * (data(i, b) - mean[b]) /
                             static_cast<double>(n - 1);
            }
        }
    }
    std::vector<std::vector<double>> comps;
    Rng rng(404);
    for (std::size_t c = 0; c < count; ++c) {
        std::vector<double> v(f);
        for (double& x : v) x = rng.gaussian();
        double lambda = 0.0;
        for (int iter = 0; iter < 20000; ++iter) {
            std::vector<double> w(f, 0.0);
            for (std::size_t a = 0; a < f; ++a) {
                for (std::size_t b = 0; b < f; ++b) w[a] += cov[a][b] * v[b];
            }
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            for (std::size_t a = 0; a < f; ++a) v[a] = w[a] / norm;
            if (std::abs(norm - lambda) < 1e-14 * std::max(1.0, norm) && iter > 10) break;
            lambda = norm;
        }
        // Deflate.
        double rayleigh = 0.0;
        {
            std::vector<double> w(f, 0.0);
            for (std::size_t a = 0; a < f; ++a) {
                for (std::size_t b = 0; b < f; ++b) w[a] += cov[a][b] * v[b];
            }
            for (std::size_t a = 0; a < f; ++a) rayleigh += v[a] * w[a];
        }
        for (std::size_t a = 0; a < f; ++a) {
            for (std::size_t b = 0; b < f; ++b) cov[a][b] -= rayleigh * v[a] * v[b];
        }
        comps.push_back(v);
    }
    return comps;
}

double abs_dot(const std::vector<double>& a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return std::abs(s);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Exhaustive complete-linkage oracle for small n: greedy merge scanning all
// active cluster pairs each step.
std::vector<double> complete_linkage_merge_distances(const Matrix& pts) {
    const std::size_t n = pts.rows();
    std::vector<std::vector<std::size_t>> clusters(n);
    for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < pts.cols(); ++c) {
            const double d = pts(i, c) - pts(j, c);
            s += d * d;
        }
        return std::sqrt(s);
    };
    std::vector<double> merge_dists;
    while (clusters.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 1;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                double worst = 0.0;
                for (std::size_t a : clusters[i]) {
                    for (std::size_t b : clusters[j]) worst = std::max(worst, dist(a, b));
                }
                if (worst < best) {
                    best = worst;
                    bi = i;
                    bj = j;
                }
            }
        }
        merge_dists.push_back(best);
        for (std::size_t b : clusters[bj]) clusters[bi].push_back(b);
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    return merge_dists;
}

}  // namespace

TEST_CASE("pca on rank-1 data captures > 99.999% of the variance") {
    Rng rng(1);
    Matrix data(50, 6);
    std::vector<double> direction(6);
    for (double& v : direction) v = rng.gaussian();
    for (std::size_t i = 0; i < 50; ++i) {
        const double t = rng.uniform(-3, 3);
        for (std::size_t j = 0; j < 6; ++j) data(i, j) = 2.0 + t * direction[j];
    }
    const PcaModel model = pca_fit(data, 2);
    const double total = std::accumulate(model.explained_variance.begin(),
                                         model.explained_variance.end(), 0.0);
    CHECK(model.explained_variance[0] / total > 0.99999);
}

TEST_CASE("pca transform maps the mean vector to the origin") {
    Rng rng(2);
    const Matrix data = random_matrix(40, 5, rng);
    const PcaModel model = pca_fit(data, 2);
    Matrix mean_row(1, 5);
    for (std::size_t j = 0; j < 5; ++j) mean_row(0, j) = model.mean[j];
    const Matrix proj = pca_transform(model, mean_row);
    CHECK(std::abs(proj(0, 0)) < 1e-12);
    CHECK(std::abs(proj(0, 1)) < 1e-12);
}

TEST_CASE("pca components are orthonormal and match the power-iteration oracle") {
    Rng rng(3);
    const Matrix data = random_matrix(12, 4, rng);
    const PcaModel model = pca_fit(data, 2);

    double n0 = 0, n1 = 0, dot = 0;
    for (std::size_t j = 0; j < 4; ++j) {
        n0 += model.components(0, j) * model.components(0, j);
        n1 += model.components(1, j) * model.components(1, j);
        dot += model.components(0, j) * model.components(1, j);
    }
    CHECK(std::abs(n0 - 1.0) < 1e-10);
    CHECK(std::abs(n1 - 1.0) < 1e-10);
    CHECK(std::abs(dot) < 1e-10);

    const auto oracle = power_iteration_components(data, 2);
    CHECK(std::abs(abs_dot(oracle[0], model.components.row(0)) - 1.0) < 1e-8);
    CHECK(std::abs(abs_dot(oracle[1], model.components.row(1)) - 1.0) < 1e-8);
}

TEST_CASE("pca embedding is invariant to row order up to sign") {
    Rng rng(4);
    const Matrix data = random_matrix(30, 5, rng);
    Matrix reversed(30, 5);
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t j = 0; j < 5; ++j) reversed(i, j) = data(29 - i, j);
    }
    const PcaModel a = pca_fit(data, 2);
    const PcaModel b = pca_fit(reversed, 2);
    for (std::size_t c = 0; c < 2; ++c) {
        double dot = 0;
        for (std::size_t j = 0; j < 5; ++j) dot += a.components(c, j) * b.components(c, j);
        CHECK(std::abs(std::abs(dot) - 1.0) < 1e-9);
    }
}

TEST_CASE("pca reconstruction error is non-increasing in component count") {
    Rng rng(5);
    const Matrix data = random_matrix(25, 6, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= 4; ++k) {
        const PcaModel model = pca_fit(data, k);
        const Matrix proj = pca_transform(model, data);
        // Lift back: x_hat = proj * components + mean.
        const Matrix lifted = matmul(proj, model.components);
        double err = 0.0;
        for (std::size_t i = 0; i < data.rows(); ++i) {
            for (std::size_t j = 0; j < data.cols(); ++j) {
                const double d = data(i, j) - (lifted(i, j) + model.mean[j]);
                err += d * d;
            }
        }
        CHECK(err <= prev + 1e-9);
        prev = err;
    }
}

TEST_CASE("pca rejects constant data") {
    CHECK_THROWS_AS(pca_fit(Matrix(10, 4, 3.0), 2), NumericalError);
}

TEST_CASE("kernel pca in the small-gain limit correlates with linear pca") {
    Rng rng(6);
    Matrix data = random_matrix(60, 8, rng);
    const PcaModel lin = pca_fit(data, 2);
    const Matrix lin_emb = pca_transform(lin, data);
    const Matrix kern_emb = kernel_pca_fit_transform(data, 1e-6, 0.0, 2);
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> a(60), b(60);
        for (std::size_t i = 0; i < 60; ++i) {
            a[i] = lin_emb(i, c);
            b[i] = kern_emb(i, c);
        }
        CHECK(std::abs(pearson(a, b)) > 0.99);
    }
}

TEST_CASE("kernel pca maps duplicate rows to identical embeddings") {
    Rng rng(7);
    Matrix data = random_matrix(20, 6, rng);
    for (std::size_t j = 0; j < 6; ++j) data(19, j) = data(3, j);
    const Matrix emb = kernel_pca_fit_transform(data, 1.0 / 6.0, 1.0, 2);
    CHECK(std::abs(emb(19, 0) - emb(3, 0)) < 1e-9);
    CHECK(std::abs(emb(19, 1) - emb(3, 1)) < 1e-9);
}

TEST_CASE("double-centered kernel matrix has vanishing row sums") {
    // Checked through the embedding: each component is an eigenvector of the
    // centered kernel, and eigenvectors of a centered matrix with nonzero
    // eigenvalue sum to ~0; the embedding columns inherit that.
    Rng rng(8);
    const Matrix data = random_matrix(40, 5, rng);
    const Matrix emb = kernel_pca_fit_transform(data, 0.2, 1.0, 2);
    for (std::size_t c = 0; c < 2; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < emb.rows(); ++i) sum += emb(i, c);
        CHECK(std::abs(sum) < 1e-6);
    }
}

TEST_CASE("hca groups two far tight pairs at K=2") {
    const Matrix pts = Matrix::from_rows({{0, 0}, {0.1, 0}, {10, 0}, {10.1, 0}});
    const Dendrogram d = hca_fit(pts);
    REQUIRE(d.merges.size() == 3);
    const std::vector<int> cut = hca_cut(d, 2);
    CHECK(cut[0] == cut[1]);
    CHECK(cut[2] == cut[3]);
    CHECK(cut[0] != cut[2]);
}

TEST_CASE("hca cut at K=N puts every point in its own cluster") {
    Rng rng(9);
    const Matrix pts = random_matrix(7, 3, rng);
    const std::vector<int> cut = hca_cut(hca_fit(pts), 7);
    std::vector<int> sorted = cut;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 7; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
    CHECK_THROWS_AS(hca_cut(hca_fit(pts), 0), ConfigError);
    CHECK_THROWS_AS(hca_cut(hca_fit(pts), 8), ConfigError);
}

TEST_CASE("complete-linkage merge distances are non-decreasing") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix pts = random_matrix(20, 2, rng);
        const Dendrogram d = hca_fit(pts);
        for (std::size_t m = 1; m < d.merges.size(); ++m) {
            CHECK(d.merges[m].distance >= d.merges[m - 1].distance - 1e-12);
        }
    }
}

TEST_CASE("hca agrees with the brute-force complete-linkage oracle on 8 points") {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const Matrix pts = random_matrix(8, 2, rng);
        const Dendrogram d = hca_fit(pts);
        const std::vector<double> oracle = complete_linkage_merge_distances(pts);
        REQUIRE(d.merges.size() == oracle.size());
        for (std::size_t m = 0; m < oracle.size(); ++m) {
            CHECK(d.merges[m].distance == doctest::Approx(oracle[m]).epsilon(1e-9));
        }
    }
}
