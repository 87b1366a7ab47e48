#include "deepclust/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace deepclust {

void adam_update(std::span<double> param, std::span<const double> grad, AdamSlot& slot,
                 std::int64_t step, const AdamConfig& cfg) {
    if (param.size() != grad.size()) {
        throw std::invalid_argument("adam_update: param/grad size mismatch: " +
                                    std::to_string(param.size()) + " vs " +
                                    std::to_string(grad.size()));
    }
    if (slot.m.size() != param.size()) {
        slot.m.assign(param.size(), 0.0);
        slot.v.assign(param.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg)
    : params_(std::move(params)), slots_(params_.size()), cfg_(cfg) {}

void Adam::step() {
    ++step_count_;
    static const std::vector<double> kEmpty;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        if (p.grad.empty()) {
            p.ensure_grad();  // zero gradient: moments decay, update is zero
        }
        adam_update(p.data, p.grad, slots_[i], step_count_, cfg_);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p->zero_grad();
    }
}

}  // namespace deepclust
