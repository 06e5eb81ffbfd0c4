#include "dbvae/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

namespace dbvae {

namespace {

double sq_dist(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    const double* pa = a.data() + i * a.cols();
    const double* pb = b.data() + j * b.cols();
    double s = 0.0;
    for (std::size_t d = 0; d < a.cols(); ++d) {
        const double diff = pa[d] - pb[d];
        s += diff * diff;
    }
    return s;
}

// k-means++ seeding: first centroid uniform, then D^2-weighted.
Matrix seed_centroids(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centroids(k, points.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());

    std::size_t first = static_cast<std::size_t>(rng.index(n));
    for (std::size_t d = 0; d < points.cols(); ++d) centroids(0, d) = points(first, d);

    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(points, i, centroids, c - 1));
            total += d2[i];
        }
        std::size_t chosen = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            chosen = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<std::size_t>(rng.index(n));
        }
        for (std::size_t d = 0; d < points.cols(); ++d) centroids(c, d) = points(chosen, d);
    }
    return centroids;
}

}  // namespace

ClusterModel kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, int max_iters) {
    const std::size_t n = points.rows();
    if (k < 1 || k > n) {
        throw ConfigError("kmeans: need 1 <= K <= N, got K=" + std::to_string(k) +
                          ", N=" + std::to_string(n));
    }
    Rng rng(splitmix64(seed));

    ClusterModel model;
    model.centroids = seed_centroids(points, k, rng);
    model.assignments.assign(n, -1);

    std::vector<std::size_t> counts(k, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        double iter_inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(points, i, model.centroids, c);
                if (d < best) {
                    best = d;
                    best_c = static_cast<int>(c);
                }
            }
            iter_inertia += best;
            if (model.assignments[i] != best_c) {
                model.assignments[i] = best_c;
                changed = true;
            }
        }
        model.iterations = iter + 1;
        model.inertia_history.push_back(iter_inertia);
        if (!changed && iter > 0) break;

        // Recompute centroids.
        Matrix sums(k, points.cols());
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = model.assignments[i];
            counts[static_cast<std::size_t>(c)] += 1;
            for (std::size_t d = 0; d < points.cols(); ++d) {
                sums(static_cast<std::size_t>(c), d) += points(i, d);
            }
        }
        std::vector<bool> reseeded(n, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed an emptied cluster at the point farthest from its
                // assigned centroid; ties break at the lowest index. Each
                // point seeds at most one cluster per pass, so several empty
                // clusters cannot collapse onto the same location.
                double far_d = -1.0;
                std::size_t far_i = n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (reseeded[i]) continue;
                    const double d =
                        sq_dist(points, i, model.centroids,
                                static_cast<std::size_t>(model.assignments[i]));
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                if (far_i == n) continue;  // fewer distinct points than clusters
                reseeded[far_i] = true;
                for (std::size_t d = 0; d < points.cols(); ++d) {
                    sums(c, d) = points(far_i, d);
                }
                counts[c] = 1;
            }
            for (std::size_t d = 0; d < points.cols(); ++d) {
                model.centroids(c, d) = sums(c, d) / static_cast<double>(counts[c]);
            }
        }
        if (!changed) break;
    }

    model.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        model.inertia +=
            sq_dist(points, i, model.centroids, static_cast<std::size_t>(model.assignments[i]));
    }
    return model;
}

ClusterModel kmeans_best_of(const Matrix& points, std::size_t k, std::uint64_t seed,
                            int restarts, int max_iters) {
    ClusterModel best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        ClusterModel m = kmeans(points, k, splitmix64(seed + 0x9e37ULL * (r + 1)), max_iters);
        if (!have || m.inertia < best.inertia) {
            best = std::move(m);
            have = true;
        }
    }
    return best;
}

double silhouette_from_distances(const Matrix& dists, const std::vector<int>& assignments) {
    const std::size_t n = assignments.size();
    int k = 0;
    for (int a : assignments) k = std::max(k, a + 1);
    if (k < 2) throw InputError("silhouette: need at least 2 clusters");

    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int a : assignments) counts[static_cast<std::size_t>(a)] += 1;
    const auto non_empty =
        std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
    if (non_empty < 2) {
        throw InputError("silhouette: need at least 2 non-empty clusters");
    }

    double total = 0.0;
    std::vector<double> per_cluster(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        const int own = assignments[i];
        if (counts[static_cast<std::size_t>(own)] <= 1) {
            continue;  // singleton scores 0
        }
        std::fill(per_cluster.begin(), per_cluster.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            per_cluster[static_cast<std::size_t>(assignments[j])] += dists(i, j);
        }
        const double a_i = per_cluster[static_cast<std::size_t>(own)] /
                           static_cast<double>(counts[static_cast<std::size_t>(own)] - 1);
        double b_i = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own || counts[static_cast<std::size_t>(c)] == 0) continue;
            b_i = std::min(b_i, per_cluster[static_cast<std::size_t>(c)] /
                                    static_cast<double>(counts[static_cast<std::size_t>(c)]));
        }
        const double denom = std::max(a_i, b_i);
        total += denom > 0.0 ? (b_i - a_i) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

namespace {

Matrix pairwise_distances(const Matrix& points) {
    const std::size_t n = points.rows();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = std::sqrt(sq_dist(points, i, points, j));
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

}  // namespace

double silhouette(const Matrix& points, const std::vector<int>& assignments,
                  std::optional<std::size_t> subsample, std::uint64_t seed) {
    if (points.rows() != assignments.size()) {
        throw ShapeError("silhouette: points/assignments length mismatch");
    }
    if (subsample && *subsample < points.rows()) {
        // Deterministic uniform subsample: partial Fisher-Yates over indices.
        std::vector<std::size_t> idx(points.rows());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(splitmix64(seed ^ 0x51170u));
        for (std::size_t i = 0; i < *subsample; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(*subsample);
        std::sort(idx.begin(), idx.end());
        Matrix pts(idx.size(), points.cols());
        std::vector<int> asg(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t d = 0; d < points.cols(); ++d) pts(i, d) = points(idx[i], d);
            asg[i] = assignments[idx[i]];
        }
        // Subsampling may leave some cluster empty or singleton; the
        // per-point conventions above already handle that.
        return silhouette_from_distances(pairwise_distances(pts), asg);
    }
    return silhouette_from_distances(pairwise_distances(points), assignments);
}

KSelection select_k(const Matrix& points, std::size_t k_min, std::size_t k_max,
                    std::uint64_t seed, const SelectKOptions& opts) {
    const std::size_t n = points.rows();
    if (k_min < 1 || k_min > k_max) throw ConfigError("select_k: invalid K range");
    KSelection sel;
    if (n <= k_max) {
        sel.range_clipped = true;
        k_max = n > 1 ? n - 1 : 1;
        k_min = std::min(k_min, k_max);
    }

    // One distance matrix (possibly on a subsample) shared across all K.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opts.silhouette_full_limit) {
        Rng rng(splitmix64(seed ^ 0x51170u));
        for (std::size_t i = 0; i < opts.silhouette_subsample; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(opts.silhouette_subsample);
        std::sort(idx.begin(), idx.end());
    }
    Matrix sub(idx.size(), points.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t d = 0; d < points.cols(); ++d) sub(i, d) = points(idx[i], d);
    }
    const Matrix dists = pairwise_distances(sub);

    for (std::size_t k = k_min; k <= k_max; ++k) {
        ClusterModel m = kmeans_best_of(points, k, splitmix64(seed) + k, opts.restarts,
                                        opts.max_iters);
        std::vector<int> asg(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) asg[i] = m.assignments[idx[i]];
        double s;
        try {
            s = silhouette_from_distances(dists, asg);
        } catch (const InputError&) {
            // Degenerate clustering (e.g. fully collapsed embeddings); this K
            // is recorded but can never win.
            sel.silhouette_by_k.emplace_back(k, -2.0);
            continue;
        }
        sel.silhouette_by_k.emplace_back(k, s);
        if (s > sel.best_silhouette) {  // strict: ties keep the smaller K
            sel.best_silhouette = s;
            sel.best_k = k;
            m.silhouette = s;
            sel.best_model = std::move(m);
        }
    }
    if (sel.best_k == 0) {
        throw InputError("select_k: every K in the range produced a degenerate clustering");
    }
    return sel;
}

ClusterLossParts clustering_loss(const Matrix& latent, const std::vector<int>& labels,
                                 double epsilon) {
    return clustering_loss_with_grad(latent, labels, epsilon).first;
}

std::pair<ClusterLossParts, Matrix> clustering_loss_with_grad(const Matrix& latent,
                                                              const std::vector<int>& labels,
                                                              double epsilon) {
    const std::size_t n = latent.rows();
    const std::size_t dims = latent.cols();
    if (labels.size() != n) throw ShapeError("clustering_loss: labels length mismatch");
    if (!(epsilon > 0.0)) throw ConfigError("clustering_loss: epsilon must be > 0");

    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) {
        throw InputError("clustering_loss: need at least 2 distinct labels in the batch");
    }
    // Compact label ids in first-appearance order of the sorted distinct set.
    std::vector<int> ids(distinct.begin(), distinct.end());
    const std::size_t k = ids.size();
    auto class_of = [&](int label) {
        return static_cast<std::size_t>(
            std::lower_bound(ids.begin(), ids.end(), label) - ids.begin());
    };

    Matrix centroids(k, dims);
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = class_of(labels[i]);
        counts[c] += 1.0;
        for (std::size_t d = 0; d < dims; ++d) centroids(c, d) += latent(i, d);
    }
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t d = 0; d < dims; ++d) centroids(c, d) /= counts[c];
    }

    // d_C and its gradient pieces. Unit vectors u_i = (z_i - c_class)/|.|;
    // a coincident point contributes a zero subgradient.
    ClusterLossParts parts;
    parts.epsilon = epsilon;
    Matrix unit(n, dims);
    Matrix unit_sum(k, dims);  // sum of unit vectors per class
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = class_of(labels[i]);
        double s = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
            const double diff = latent(i, d) - centroids(c, d);
            s += diff * diff;
        }
        const double dist = std::sqrt(s);
        parts.d_cohesion += dist;
        if (dist > 0.0) {
            for (std::size_t d = 0; d < dims; ++d) {
                const double u = (latent(i, d) - centroids(c, d)) / dist;
                unit(i, d) = u;
                unit_sum(c, d) += u;
            }
        }
    }

    // d_R and the per-class centroid gradient.
    Matrix rep_grad(k, dims);  // d(d_R)/d(centroid_c)
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < dims; ++d) {
                const double diff = centroids(i, d) - centroids(j, d);
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            parts.d_repulsion += dist;
            if (dist > 0.0) {
                for (std::size_t d = 0; d < dims; ++d) {
                    const double u = (centroids(i, d) - centroids(j, d)) / dist;
                    rep_grad(i, d) += u;
                    rep_grad(j, d) -= u;
                }
            }
        }
    }

    const double denom = parts.d_repulsion + epsilon;
    parts.value = (parts.d_cohesion + epsilon) / denom;

    // dL/dz_i = [dC_i - L * dR_i] / denom, with
    //   dC_i = u_i - unit_sum(class)/N_class      (centroid term of d_C)
    //   dR_i = rep_grad(class)/N_class            (centroid term of d_R)
    Matrix grad(n, dims);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = class_of(labels[i]);
        for (std::size_t d = 0; d < dims; ++d) {
            const double dc = unit(i, d) - unit_sum(c, d) / counts[c];
            const double dr = rep_grad(c, d) / counts[c];
            grad(i, d) = (dc - parts.value * dr) / denom;
        }
    }
    return {parts, grad};
}

ClusterSpectraSummary cluster_spectra_summary(const Matrix& spectra,
                                              const std::vector<int>& assignments,
                                              std::size_t num_clusters) {
    if (spectra.rows() != assignments.size()) {
        throw ShapeError("cluster_spectra_summary: assignments do not cover the batch");
    }
    ClusterSpectraSummary summary;
    const std::size_t bins = spectra.cols();
    for (std::size_t c = 0; c < num_clusters; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] == static_cast<int>(c)) members.push_back(i);
        }
        if (members.empty()) {
            summary.omitted_clusters.push_back(static_cast<int>(c));
            continue;
        }
        ClusterSpectraSummary::Entry e;
        e.cluster = static_cast<int>(c);
        e.count = members.size();
        e.mean.assign(bins, 0.0);
        e.q25.assign(bins, 0.0);
        e.q75.assign(bins, 0.0);
        std::vector<double> column(members.size());
        for (std::size_t d = 0; d < bins; ++d) {
            double sum = 0.0;
            for (std::size_t m = 0; m < members.size(); ++m) {
                column[m] = spectra(members[m], d);
                sum += column[m];
            }
            e.mean[d] = sum / static_cast<double>(members.size());
            std::sort(column.begin(), column.end());
            // Linearly interpolated quantiles.
            auto quantile = [&](double q) {
                const double pos = q * static_cast<double>(column.size() - 1);
                const std::size_t lo = static_cast<std::size_t>(pos);
                const std::size_t hi = std::min(lo + 1, column.size() - 1);
                const double frac = pos - static_cast<double>(lo);
                return column[lo] + (column[hi] - column[lo]) * frac;
            };
            e.q25[d] = quantile(0.25);
            e.q75[d] = quantile(0.75);
        }
        summary.entries.push_back(std::move(e));
    }
    return summary;
}

}  // namespace dbvae
