#pragma once

#include <cstdint>
#include <vector>

namespace deepclust {

// Joint count table between a ground-truth labeling and a cluster
// assignment. Rows follow truth labels, columns follow cluster labels;
// label value v indexes row/column v directly (labels must be >= 0).
struct ContingencyTable {
    std::int64_t n_classes = 0;
    std::int64_t n_clusters = 0;
    std::vector<std::int64_t> counts;    // n_classes x n_clusters, row-major
    std::vector<std::int64_t> row_sums;  // per truth class
    std::vector<std::int64_t> col_sums;  // per cluster
    std::int64_t total = 0;

    static ContingencyTable from(const std::vector<std::int32_t>& truth,
                                 const std::vector<std::int32_t>& clusters);

    std::int64_t at(std::int64_t row, std::int64_t col) const {
        return counts[static_cast<std::size_t>(row * n_clusters + col)];
    }
};

struct HungarianResult {
    std::vector<std::int64_t> assignment;  // row -> column
    double cost = 0.0;
};

// Minimum-cost perfect matching on a square cost matrix (row-major,
// n x n). Throws if the matrix is not square.
HungarianResult hungarian(const std::vector<double>& cost, std::int64_t n_rows,
                          std::int64_t n_cols);

// Unsupervised clustering accuracy: best injective cluster->class mapping,
// solved via the assignment problem on the negated contingency table
// (zero-padded square when class and cluster counts differ).
double acc(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& clusters);

// Mutual information normalized by the average entropy of both partitions
// (natural log). Defined as 0 when both partitions are constant.
double nmi(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& clusters);

// Adjusted Rand index via pair counting; 1 when both partitions are
// trivial (MaxIndex == ExpectedIndex).
double ari(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& clusters);

}  // namespace deepclust
