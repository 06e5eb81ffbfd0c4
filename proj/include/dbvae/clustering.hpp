#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dbvae/matrix.hpp"
#include "dbvae/rng.hpp"

namespace dbvae {

struct ClusterModel {
    Matrix centroids;              // K × dims
    std::vector<int> assignments;  // one index per point
    double inertia = 0.0;          // sum of squared point-to-centroid distances
    double silhouette = 0.0;       // filled by the caller when computed
    int iterations = 0;
    std::vector<double> inertia_history;  // per Lloyd iteration, non-increasing
};

// Lloyd's algorithm with k-means++ seeding, run until the assignments stop
// changing or max_iters is hit. An emptied cluster is re-seeded at the point
// farthest from its current centroid.
ClusterModel kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    int max_iters = 300);

// Best of `restarts` seeded runs by inertia.
ClusterModel kmeans_best_of(const Matrix& points, std::size_t k, std::uint64_t seed,
                            int restarts = 5, int max_iters = 300);

// Mean silhouette score in [-1, 1]. Points in singleton clusters score 0.
// subsample (when set and < N) deterministically restricts the computation
// to that many points.
double silhouette(const Matrix& points, const std::vector<int>& assignments,
                  std::optional<std::size_t> subsample = std::nullopt,
                  std::uint64_t seed = 0);

// Variant over a precomputed condensed distance matrix (N×N, symmetric).
double silhouette_from_distances(const Matrix& dists, const std::vector<int>& assignments);

struct KSelection {
    std::size_t best_k = 0;
    std::vector<std::pair<std::size_t, double>> silhouette_by_k;
    bool range_clipped = false;  // set when N <= k_max forced a smaller range
    ClusterModel best_model;     // the winning kmeans run
    double best_silhouette = -2.0;
};

struct SelectKOptions {
    int restarts = 5;
    int max_iters = 300;
    std::size_t silhouette_full_limit = 5000;  // above this, subsample
    std::size_t silhouette_subsample = 2000;
};

// Runs kmeans for each K in [k_min, k_max] and picks the K with the highest
// mean silhouette; ties break toward smaller K.
KSelection select_k(const Matrix& points, std::size_t k_min, std::size_t k_max,
                    std::uint64_t seed, const SelectKOptions& opts = {});

struct ClusterLossParts {
    double d_cohesion = 0.0;   // sum of member-to-class-centroid distances
    double d_repulsion = 0.0;  // sum of pairwise centroid distances
    double epsilon = 0.0;
    double value = 0.0;        // (d_cohesion + eps) / (d_repulsion + eps)
};

// Differentiable semi-supervised clustering loss over labelled latent means.
// Class centroids are the in-batch label means; gradients flow through both
// the members and the centroids.
ClusterLossParts clustering_loss(const Matrix& latent, const std::vector<int>& labels,
                                 double epsilon = 1e-8);

// Loss plus dLoss/dlatent (same shape as latent).
std::pair<ClusterLossParts, Matrix> clustering_loss_with_grad(const Matrix& latent,
                                                              const std::vector<int>& labels,
                                                              double epsilon = 1e-8);

struct ClusterSpectraSummary {
    struct Entry {
        int cluster = 0;
        std::size_t count = 0;
        std::vector<double> mean;
        std::vector<double> q25;
        std::vector<double> q75;
    };
    std::vector<Entry> entries;
    std::vector<int> omitted_clusters;  // clusters with no members
};

// Per-cluster mean spectrum and interquartile envelope over the given rows.
ClusterSpectraSummary cluster_spectra_summary(const Matrix& spectra,
                                              const std::vector<int>& assignments,
                                              std::size_t num_clusters);

}  // namespace dbvae
