#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deepclust/tensor.hpp"

namespace deepclust {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moment accumulators for one parameter tensor.
struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;
};

// One bias-corrected Adam update on a single parameter array. `step` is the
// 1-based step count after increment.
void adam_update(std::span<double> param, std::span<const double> grad, AdamSlot& slot,
                 std::int64_t step, const AdamConfig& cfg);

// Drives adam_update over a fixed parameter list in registration order.
class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig cfg = {});

    // Applies one update from the parameters' accumulated gradients.
    // Parameters whose grad was never touched are treated as zero-gradient.
    void step();
    void zero_grad();
    std::int64_t steps() const { return step_count_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<AdamSlot> slots_;
    AdamConfig cfg_;
    std::int64_t step_count_ = 0;
};

}  // namespace deepclust
