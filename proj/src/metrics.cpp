#include "deepclust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace deepclust {

namespace {

void validate_pair(const std::vector<std::int32_t>& truth,
                   const std::vector<std::int32_t>& clusters, std::size_t min_len) {
    if (truth.size() != clusters.size()) {
        throw std::invalid_argument("label vectors differ in length: " +
                                    std::to_string(truth.size()) + " vs " +
                                    std::to_string(clusters.size()));
    }
    if (truth.size() < min_len) {
        throw std::invalid_argument("label vectors need at least " + std::to_string(min_len) +
                                    " entries, got " + std::to_string(truth.size()));
    }
    for (std::int32_t v : truth) {
        if (v < 0) throw std::invalid_argument("negative truth label");
    }
    for (std::int32_t v : clusters) {
        if (v < 0) throw std::invalid_argument("negative cluster label");
    }
}

// Entropy of a count vector, -sum (c/N) ln(c/N), natural log.
double entropy(const std::vector<std::int64_t>& counts, std::int64_t total) {
    double h = 0.0;
    for (std::int64_t c : counts) {
        if (c > 0) {
            const double p = static_cast<double>(c) / static_cast<double>(total);
            h -= p * std::log(p);
        }
    }
    return h;
}

std::int64_t choose2(std::int64_t n) { return n * (n - 1) / 2; }

}  // namespace

ContingencyTable ContingencyTable::from(const std::vector<std::int32_t>& truth,
                                        const std::vector<std::int32_t>& clusters) {
    validate_pair(truth, clusters, 1);
    ContingencyTable t;
    std::int32_t max_y = 0, max_c = 0;
    for (std::int32_t v : truth) max_y = std::max(max_y, v);
    for (std::int32_t v : clusters) max_c = std::max(max_c, v);
    t.n_classes = max_y + 1;
    t.n_clusters = max_c + 1;
    t.counts.assign(static_cast<std::size_t>(t.n_classes * t.n_clusters), 0);
    t.row_sums.assign(static_cast<std::size_t>(t.n_classes), 0);
    t.col_sums.assign(static_cast<std::size_t>(t.n_clusters), 0);
    t.total = static_cast<std::int64_t>(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++t.counts[static_cast<std::size_t>(truth[i] * t.n_clusters + clusters[i])];
        ++t.row_sums[static_cast<std::size_t>(truth[i])];
        ++t.col_sums[static_cast<std::size_t>(clusters[i])];
    }
    return t;
}

HungarianResult hungarian(const std::vector<double>& cost, std::int64_t n_rows,
                          std::int64_t n_cols) {
    if (n_rows != n_cols) {
        throw std::invalid_argument("hungarian: matrix must be square, got " +
                                    std::to_string(n_rows) + "x" + std::to_string(n_cols));
    }
    const std::int64_t n = n_rows;
    if (n == 0 || static_cast<std::int64_t>(cost.size()) != n * n) {
        throw std::invalid_argument("hungarian: bad matrix size");
    }
    const double inf = std::numeric_limits<double>::infinity();

    // Potentials formulation with 1-based bookkeeping; p[j] is the row
    // matched to column j.
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<std::int64_t> p(static_cast<std::size_t>(n + 1), 0);
    std::vector<std::int64_t> way(static_cast<std::size_t>(n + 1), 0);

    for (std::int64_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::int64_t j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const std::int64_t i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            std::int64_t j1 = 0;
            for (std::int64_t j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost[static_cast<std::size_t>((i0 - 1) * n + (j - 1))] -
                                   u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (std::int64_t j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const std::int64_t j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    HungarianResult result;
    result.assignment.assign(static_cast<std::size_t>(n), -1);
    for (std::int64_t j = 1; j <= n; ++j) {
        result.assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        total += cost[static_cast<std::size_t>(i * n + result.assignment[static_cast<std::size_t>(i)])];
    }
    result.cost = total;
    return result;
}

double acc(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& clusters) {
    validate_pair(truth, clusters, 1);
    const ContingencyTable t = ContingencyTable::from(truth, clusters);
    const std::int64_t side = std::max(t.n_classes, t.n_clusters);
    // Maximize matched counts == minimize negated counts; padding rows and
    // columns cost 0.
    std::vector<double> cost(static_cast<std::size_t>(side * side), 0.0);
    for (std::int64_t r = 0; r < t.n_classes; ++r) {
        for (std::int64_t c = 0; c < t.n_clusters; ++c) {
            cost[static_cast<std::size_t>(r * side + c)] = -static_cast<double>(t.at(r, c));
        }
    }
    const HungarianResult match = hungarian(cost, side, side);
    return -match.cost / static_cast<double>(t.total);
}

double nmi(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& clusters) {
    validate_pair(truth, clusters, 1);
    const ContingencyTable t = ContingencyTable::from(truth, clusters);
    const double hy = entropy(t.row_sums, t.total);
    const double hc = entropy(t.col_sums, t.total);
    if (hy == 0.0 && hc == 0.0) {
        return 0.0;  // both partitions constant: 0/0 read as 0
    }
    // I(y;c) = H(y) + H(c) - H(y,c). Computing the joint entropy with the
    // same routine keeps I == H exactly when the partitions coincide.
    const double hj = entropy(t.counts, t.total);
    double mi = hy + hc - hj;
    if (mi < 0.0) mi = 0.0;  // guard tiny negative round-off
    return mi / (0.5 * (hy + hc));
}

double ari(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& clusters) {
    validate_pair(truth, clusters, 2);
    const ContingencyTable t = ContingencyTable::from(truth, clusters);
    std::int64_t index = 0;
    for (std::int64_t c : t.counts) index += choose2(c);
    std::int64_t sum_rows = 0, sum_cols = 0;
    for (std::int64_t a : t.row_sums) sum_rows += choose2(a);
    for (std::int64_t b : t.col_sums) sum_cols += choose2(b);
    const double total_pairs = static_cast<double>(choose2(t.total));
    const double expected = static_cast<double>(sum_rows) * static_cast<double>(sum_cols) / total_pairs;
    const double max_index = 0.5 * (static_cast<double>(sum_rows) + static_cast<double>(sum_cols));
    if (max_index == expected) {
        return 1.0;  // both partitions trivial
    }
    return (static_cast<double>(index) - expected) / (max_index - expected);
}

}  // namespace deepclust
