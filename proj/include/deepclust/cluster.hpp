#pragma once

#include <cstdint>
#include <vector>

#include "deepclust/cae.hpp"
#include "deepclust/corpus.hpp"
#include "deepclust/tensor.hpp"

namespace deepclust {

struct KMeansResult {
    std::vector<double> centers;  // k x dim, row-major
    std::int64_t k = 0;
    std::int64_t dim = 0;
    std::vector<std::int32_t> assignments;
    double inertia = 0.0;
    std::int64_t iterations = 0;
    std::vector<double> inertia_trace;  // after each assignment step of the winning restart
};

// Lloyd iterations from k-means++ seeding, best of a few seeded restarts;
// deterministic given the seed. Empty clusters re-seed to the point farthest
// from its assigned center. Throws when k exceeds the number of distinct
// points.
KMeansResult kmeans(const std::vector<double>& points, std::int64_t n, std::int64_t dim,
                    std::int64_t k, std::uint64_t seed, std::int64_t max_iter = 100);

// DEC auxiliary target: t_ik = (p_ik^2 / f_k) / sum_k' (p_ik'^2 / f_k'),
// f_k = sum_i p_ik. Throws on an empty soft cluster (zero column).
std::vector<double> target_distribution(const std::vector<double>& p, std::int64_t n,
                                        std::int64_t k);

// sum_i sum_k t ln(t / p) with 0 ln 0 = 0; throws when p = 0 where t > 0.
double kl_loss(const std::vector<double>& target, const std::vector<double>& p, std::int64_t n,
               std::int64_t k);

// Graph node: KL(target || p) against a constant target.
TensorPtr kl_div_node(const std::vector<double>& target, const TensorPtr& p);

enum class FinetuneMethod : std::uint8_t { Dec, Idec };
const char* finetune_method_name(FinetuneMethod method);
FinetuneMethod finetune_method_from_name(const std::string& name);

struct FinetuneConfig {
    FinetuneMethod method = FinetuneMethod::Dec;
    std::int64_t epochs = 2000;
    std::int64_t refresh_interval = 5;  // <= 0 means never refresh after epoch 0
    double gamma = 0.1;                 // IDEC weight on the KL term
    double stop_tolerance = 0.001;      // fraction of samples changing assignment
    std::int64_t batch_size = 16;
    double lr = 1e-3;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    bool record_steps = false;
};

struct FinetuneResult {
    std::vector<std::vector<std::int32_t>> assignment_history;  // per refresh
    std::vector<LossPoint> epochs;  // mse (IDEC only), ccl slot reused for kl, total
    std::vector<LossPoint> steps;
    bool early_stopped = false;
    std::int64_t epochs_run = 0;
};

// DEC: minimizes KL(T || P) over encoder weights and centers, T refreshed
// from the full dataset every refresh_interval epochs and held constant in
// between. IDEC: reconstruction + gamma * KL with the decoder retained.
// Early-stops when the fraction of changed assignments between consecutive
// refreshes drops below stop_tolerance.
FinetuneResult finetune(CaeModel& model, const TensorPtr& centers, const TrainView& data,
                        const FinetuneConfig& config);

}  // namespace deepclust
