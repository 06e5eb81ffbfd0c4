#include "dbvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dbvae {

ContingencyTable contingency_table(const std::vector<int>& labels_true,
                                   const std::vector<int>& labels_pred) {
    if (labels_true.size() != labels_pred.size()) {
        throw InputError("contingency_table: labelings have different lengths");
    }
    if (labels_true.size() < 2) {
        throw InputError("contingency_table: need at least 2 samples");
    }
    std::map<int, std::size_t> row_of, col_of;
    for (int v : labels_true) row_of.emplace(v, 0);
    for (int v : labels_pred) col_of.emplace(v, 0);
    std::size_t r = 0;
    for (auto& [k, idx] : row_of) idx = r++;
    std::size_t c = 0;
    for (auto& [k, idx] : col_of) idx = c++;

    ContingencyTable t;
    t.counts.assign(row_of.size(), std::vector<std::int64_t>(col_of.size(), 0));
    t.row_sums.assign(row_of.size(), 0);
    t.col_sums.assign(col_of.size(), 0);
    t.total = static_cast<std::int64_t>(labels_true.size());
    for (std::size_t i = 0; i < labels_true.size(); ++i) {
        const std::size_t ri = row_of[labels_true[i]];
        const std::size_t ci = col_of[labels_pred[i]];
        t.counts[ri][ci] += 1;
        t.row_sums[ri] += 1;
        t.col_sums[ci] += 1;
    }
    return t;
}

namespace {

double comb2(std::int64_t n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); }

}  // namespace

double ari(const std::vector<int>& labels_true, const std::vector<int>& labels_pred) {
    const ContingencyTable t = contingency_table(labels_true, labels_pred);

    double sum_cells = 0.0;
    for (const auto& row : t.counts) {
        for (std::int64_t nij : row) sum_cells += comb2(nij);
    }
    double sum_rows = 0.0;
    for (std::int64_t a : t.row_sums) sum_rows += comb2(a);
    double sum_cols = 0.0;
    for (std::int64_t b : t.col_sums) sum_cols += comb2(b);

    const double expected = sum_rows * sum_cols / comb2(t.total);
    const double max_index = 0.5 * (sum_rows + sum_cols);
    const double denom = max_index - expected;
    if (denom == 0.0) {
        // Both partitions are trivial (all-singletons or one block); they
        // agree under the permutation model.
        return 1.0;
    }
    return (sum_cells - expected) / denom;
}

double entropy_of_partition(const std::vector<std::int64_t>& sums, std::int64_t total) {
    double h = 0.0;
    for (std::int64_t s : sums) {
        if (s > 0) {
            const double p = static_cast<double>(s) / static_cast<double>(total);
            h -= p * std::log(p);
        }
    }
    return h;
}

double mutual_information(const ContingencyTable& t) {
    const double n = static_cast<double>(t.total);
    double mi = 0.0;
    for (std::size_t i = 0; i < t.counts.size(); ++i) {
        for (std::size_t j = 0; j < t.counts[i].size(); ++j) {
            const std::int64_t nij = t.counts[i][j];
            if (nij == 0) continue;
            const double pij = static_cast<double>(nij) / n;
            mi += pij * std::log(n * static_cast<double>(nij) /
                                 (static_cast<double>(t.row_sums[i]) *
                                  static_cast<double>(t.col_sums[j])));
        }
    }
    return mi;
}

double expected_mutual_information(const ContingencyTable& t) {
    // E[MI] = sum_ij sum_nij (nij/N) log(N nij/(a_i b_j)) * P_hyper(nij),
    // with the hypergeometric term evaluated in log space via lgamma.
    const std::int64_t n = t.total;
    const double log_n = std::log(static_cast<double>(n));
    double emi = 0.0;
    for (std::int64_t a : t.row_sums) {
        for (std::int64_t b : t.col_sums) {
            const std::int64_t lo = std::max<std::int64_t>(1, a + b - n);
            const std::int64_t hi = std::min(a, b);
            for (std::int64_t nij = lo; nij <= hi; ++nij) {
                const double term =
                    (static_cast<double>(nij) / static_cast<double>(n)) *
                    (log_n + std::log(static_cast<double>(nij)) -
                     std::log(static_cast<double>(a) * static_cast<double>(b)));
                // log P = log[ a! b! (N-a)! (N-b)! / (N! nij! (a-nij)! (b-nij)! (N-a-b+nij)!) ]
                const double log_p =
                    std::lgamma(static_cast<double>(a + 1)) +
                    std::lgamma(static_cast<double>(b + 1)) +
                    std::lgamma(static_cast<double>(n - a + 1)) +
                    std::lgamma(static_cast<double>(n - b + 1)) -
                    std::lgamma(static_cast<double>(n + 1)) -
                    std::lgamma(static_cast<double>(nij + 1)) -
                    std::lgamma(static_cast<double>(a - nij + 1)) -
                    std::lgamma(static_cast<double>(b - nij + 1)) -
                    std::lgamma(static_cast<double>(n - a - b + nij + 1));
                emi += term * std::exp(log_p);
            }
        }
    }
    return emi;
}

double ami(const std::vector<int>& labels_true, const std::vector<int>& labels_pred) {
    const ContingencyTable t = contingency_table(labels_true, labels_pred);
    const double h_true = entropy_of_partition(t.row_sums, t.total);
    const double h_pred = entropy_of_partition(t.col_sums, t.total);

    if (h_true == 0.0 && h_pred == 0.0) {
        // Both labelings constant: identical partitioning by definition.
        return 1.0;
    }
    const double mi = mutual_information(t);
    const double emi = expected_mutual_information(t);
    const double normalizer = 0.5 * (h_true + h_pred);
    const double denom = normalizer - emi;
    if (denom == 0.0) {
        return 0.0;
    }
    return (mi - emi) / denom;
}

}  // namespace dbvae
