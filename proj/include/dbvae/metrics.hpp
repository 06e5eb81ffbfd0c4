#pragma once

#include <cstdint>
#include <vector>

#include "dbvae/errors.hpp"

namespace dbvae {

// R×C contingency table between a "true" and a "predicted" labelling.
struct ContingencyTable {
    std::vector<std::vector<std::int64_t>> counts;  // R rows × C cols
    std::vector<std::int64_t> row_sums;
    std::vector<std::int64_t> col_sums;
    std::int64_t total = 0;
};

// Labels are arbitrary integers; each distinct value is one class/cluster.
ContingencyTable contingency_table(const std::vector<int>& labels_true,
                                   const std::vector<int>& labels_pred);

// Adjusted Rand index: (RI - E[RI]) / (max RI - E[RI]) under the permutation
// model. Both-trivial partitions (where the adjustment degenerates) score 1.
double ari(const std::vector<int>& labels_true, const std::vector<int>& labels_pred);

// Adjusted mutual information with the arithmetic-mean entropy normalizer:
// (MI - E[MI]) / (mean(H_true, H_pred) - E[MI]). Two constant labellings
// score 1 (identical partitioning); a constant vs non-constant pair scores 0.
double ami(const std::vector<int>& labels_true, const std::vector<int>& labels_pred);

// Expected mutual information under the hypergeometric permutation model,
// evaluated term-by-term in log space. Exposed for oracle tests.
double expected_mutual_information(const ContingencyTable& table);

double mutual_information(const ContingencyTable& table);
double entropy_of_partition(const std::vector<std::int64_t>& sums, std::int64_t total);

}  // namespace dbvae
