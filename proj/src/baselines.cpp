#include "dbvae/baselines.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "dbvae/rng.hpp"

namespace dbvae {

namespace {

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void fix_sign(std::vector<double>& v) {
    double best = 0.0;
    for (double x : v) {
        if (std::abs(x) > std::abs(best)) best = x;
    }
    if (best < 0.0) {
        for (double& x : v) x = -x;
    }
}

}  // namespace

PcaModel pca_fit(const Matrix& data, std::size_t n_components) {
    const std::size_t n = data.rows();
    const std::size_t f = data.cols();
    if (n < 2) throw InputError("pca_fit: need at least 2 rows");
    if (n_components > f) throw ConfigError("pca_fit: more components than features");

    PcaModel model;
    model.mean.assign(f, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) model.mean[j] += data(i, j);
    }
    for (double& m : model.mean) m /= static_cast<double>(n);

    EigenRowMajor centered(n, f);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) centered(i, j) = data(i, j) - model.mean[j];
    }
    EigenRowMajor cov = centered.transpose() * centered / static_cast<double>(n - 1);
    if (cov.trace() <= 1e-300) {
        throw NumericalError("pca_fit: degenerate variance (constant data)");
    }

    Eigen::SelfAdjointEigenSolver<EigenRowMajor> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("pca_fit: eigendecomposition failed");
    }
    // Eigen returns ascending eigenvalues; take the top n_components.
    model.components = Matrix(n_components, f);
    model.explained_variance.resize(n_components);
    for (std::size_t c = 0; c < n_components; ++c) {
        const Eigen::Index col = static_cast<Eigen::Index>(f - 1 - c);
        model.explained_variance[c] = solver.eigenvalues()(col);
        std::vector<double> comp(f);
        for (std::size_t j = 0; j < f; ++j) {
            comp[j] = solver.eigenvectors()(static_cast<Eigen::Index>(j), col);
        }
        fix_sign(comp);
        for (std::size_t j = 0; j < f; ++j) model.components(c, j) = comp[j];
    }
    return model;
}

Matrix pca_transform(const PcaModel& model, const Matrix& data) {
    if (data.cols() != model.mean.size()) {
        throw ShapeError("pca_transform: feature width mismatch");
    }
    Matrix centered = data;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        for (std::size_t j = 0; j < data.cols(); ++j) centered(i, j) -= model.mean[j];
    }
    return matmul_bt(centered, model.components);
}

Matrix kernel_pca_fit_transform(const Matrix& data, double gain, double offset,
                                std::size_t n_components) {
    const std::size_t n = data.rows();
    if (n < 2) throw InputError("kernel_pca: need at least 2 rows");

    Matrix k = matmul_bt(data, data);  // Gram matrix
    for (double& v : k.values()) v = std::tanh(gain * v + offset);

    // Double-centering: K' = K - row-means - col-means + total mean.
    std::vector<double> row_mean(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) row_mean[i] += k(i, j);
        row_mean[i] /= static_cast<double>(n);
        total += row_mean[i];
    }
    total /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            k(i, j) += total - row_mean[i] - row_mean[j];
        }
    }

    // Top eigenpairs by power iteration with deflation; the kernel matrix is
    // symmetric and we only ever need two components.
    Matrix embedding(n, n_components);
    Rng rng(0x9Ca1eULL);
    std::vector<double> v(n), w(n);
    for (std::size_t comp = 0; comp < n_components; ++comp) {
        for (double& x : v) x = rng.gaussian();
        double lambda = 0.0;
        for (int iter = 0; iter < 2000; ++iter) {
            // w = K v
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                const double* row = k.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) acc += row[j] * v[j];
                w[i] = acc;
            }
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) break;
            for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
            const double next = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
            if (std::abs(next - lambda) <= 1e-12 * std::max(1.0, std::abs(next)) &&
                iter > 2) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        // Power iteration tracks the dominant |eigenvalue|; a non-positive one
        // means the (indefinite) sigmoid kernel has no usable component here.
        double rayleigh = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            const double* row = k.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) acc += row[j] * v[j];
            rayleigh += v[i] * acc;
        }
        if (!(rayleigh > 0.0)) {
            throw NumericalError("kernel_pca: non-positive leading eigenvalue");
        }
        fix_sign(v);
        const double scale_v = std::sqrt(rayleigh);
        for (std::size_t i = 0; i < n; ++i) embedding(i, comp) = scale_v * v[i];
        // Deflate: K <- K - lambda v v^T.
        for (std::size_t i = 0; i < n; ++i) {
            double* row = k.data() + i * n;
            const double vi = rayleigh * v[i];
            for (std::size_t j = 0; j < n; ++j) row[j] -= vi * v[j];
        }
    }
    return embedding;
}

Dendrogram hca_fit(const Matrix& data) {
    const std::size_t n = data.rows();
    if (n < 2) throw InputError("hca_fit: need at least 2 rows");

    // Working distance matrix between active cluster slots.
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < data.cols(); ++c) {
                const double diff = data(i, c) - data(j, c);
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            d(i, j) = dist;
            d(j, i) = dist;
        }
    }

    std::vector<bool> active(n, true);
    std::vector<int> cluster_id(n);
    std::iota(cluster_id.begin(), cluster_id.end(), 0);
    std::vector<std::size_t> nn(n, 0);
    std::vector<double> nn_dist(n, 0.0);

    auto rescan = [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = i;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !active[j]) continue;
            if (d(i, j) < best) {
                best = d(i, j);
                arg = j;
            }
        }
        nn[i] = arg;
        nn_dist[i] = best;
    };
    for (std::size_t i = 0; i < n; ++i) rescan(i);

    Dendrogram out;
    out.leaves = n;
    int next_id = static_cast<int>(n);
    for (std::size_t step = 0; step + 1 < n; ++step) {
        // Globally closest active pair; ties resolve to the lowest slots.
        double best = std::numeric_limits<double>::infinity();
        std::size_t a = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (active[i] && nn_dist[i] < best) {
                best = nn_dist[i];
                a = i;
            }
        }
        std::size_t b = nn[a];
        if (b < a) std::swap(a, b);

        out.merges.push_back({std::min(cluster_id[a], cluster_id[b]),
                              std::max(cluster_id[a], cluster_id[b]), d(a, b)});

        // Complete linkage: distance to the merged cluster is the max.
        active[b] = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (!active[j] || j == a) continue;
            const double merged = std::max(d(a, j), d(b, j));
            d(a, j) = merged;
            d(j, a) = merged;
        }
        cluster_id[a] = next_id++;
        rescan(a);
        for (std::size_t j = 0; j < n; ++j) {
            if (!active[j] || j == a) continue;
            if (nn[j] == a || nn[j] == b) rescan(j);
        }
    }
    return out;
}

std::vector<int> hca_cut(const Dendrogram& dendrogram, std::size_t k) {
    const std::size_t n = dendrogram.leaves;
    if (k < 1 || k > n) {
        throw ConfigError("hca_cut: K must be in [1, N]");
    }
    // Union-find over scipy-style node ids; apply the first N-k merges.
    std::vector<int> parent(2 * n - 1);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t m = 0; m < n - k; ++m) {
        const auto& merge = dendrogram.merges[m];
        const int id = static_cast<int>(n + m);
        parent[find(merge.node_a)] = id;
        parent[find(merge.node_b)] = id;
    }
    std::vector<int> labels(n);
    std::vector<int> remap(2 * n - 1, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int root = find(static_cast<int>(i));
        if (remap[root] < 0) remap[root] = next++;
        labels[i] = remap[root];
    }
    return labels;
}

}  // namespace dbvae
