#pragma once

#include <vector>

#include "dbvae/matrix.hpp"

namespace dbvae {

struct PcaModel {
    std::vector<double> mean;           // feature means
    Matrix components;                  // n_components × features, orthonormal rows
    std::vector<double> explained_variance;
};

// Top-k eigenvectors of the covariance of the mean-centered data. Component
// signs are fixed so the largest-magnitude entry is positive.
PcaModel pca_fit(const Matrix& data, std::size_t n_components = 2);
Matrix pca_transform(const PcaModel& model, const Matrix& data);

// Kernel PCA with the sigmoid kernel K(x,y) = tanh(gain*<x,y> + offset) on the
// double-centered kernel matrix; projections are scaled by 1/sqrt(eigenvalue).
// Transductive: embeds exactly the rows it is given.
Matrix kernel_pca_fit_transform(const Matrix& data, double gain, double offset,
                                std::size_t n_components = 2);

struct Dendrogram {
    struct Merge {
        int node_a = 0;  // scipy-style ids: leaves 0..N-1, merges N..2N-2
        int node_b = 0;
        double distance = 0.0;
    };
    std::vector<Merge> merges;  // N-1 entries
    std::size_t leaves = 0;
};

// Agglomerative clustering with complete linkage on Euclidean distances.
Dendrogram hca_fit(const Matrix& data);

// Cuts the dendrogram into exactly k clusters; labels are assigned in order
// of first appearance.
std::vector<int> hca_cut(const Dendrogram& dendrogram, std::size_t k);

}  // namespace dbvae
