#include "deepclust/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace deepclust {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

TensorPtr Tensor::make(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
    return make(std::move(shape), std::move(v), requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return make(Shape{1}, std::vector<double>{value}, requires_grad);
}

double Tensor::item() const {
    if (data.size() != 1) {
        throw std::logic_error("item() requires a scalar tensor, got " + shape_str(shape));
    }
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::add_to_grad(std::span<const double> g) {
    if (g.size() != data.size()) {
        throw std::logic_error("gradient size mismatch: " + std::to_string(g.size()) + " vs " +
                               std::to_string(data.size()));
    }
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        grad[i] += g[i];
    }
}

void Tensor::detach_() {
    parents.clear();
    backward_fn = nullptr;
}

void backward(const TensorPtr& loss) {
    if (!loss) {
        throw std::invalid_argument("backward: null loss");
    }
    if (loss->size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
    }

    std::vector<TensorPtr> topo;
    std::unordered_set<const Tensor*> visited;
    // Iterative DFS; graphs can be a few thousand nodes deep over an epoch.
    std::vector<std::pair<TensorPtr, std::size_t>> stack;
    stack.emplace_back(loss, 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            TensorPtr child = node->parents[next_child++];
            if (child && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) {
            (*it)->backward_fn();
        }
    }
}

bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

namespace {

void pairwise_sum_rec(std::int64_t lo, std::int64_t hi, std::span<double> out,
                      const std::function<void(std::int64_t, std::span<double>)>& fill) {
    if (hi - lo == 1) {
        fill(lo, out);
        return;
    }
    const std::int64_t mid = lo + (hi - lo) / 2;
    pairwise_sum_rec(lo, mid, out, fill);
    std::vector<double> right(out.size());
    pairwise_sum_rec(mid, hi, right, fill);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += right[i];
    }
}

}  // namespace

void pairwise_sum(std::int64_t count, std::span<double> out,
                  const std::function<void(std::int64_t, std::span<double>)>& fill) {
    if (count <= 0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    pairwise_sum_rec(0, count, out, fill);
}

TensorPtr add_scalars(const TensorPtr& a, const TensorPtr& b) {
    if (a->size() != 1 || b->size() != 1) {
        throw std::invalid_argument("add_scalars expects scalars");
    }
    auto out = Tensor::scalar(a->data[0] + b->data[0], a->requires_grad || b->requires_grad);
    out->parents = {a, b};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [a, b, wout]() {
        auto o = wout.lock();
        if (!o) return;
        const double g[1] = {o->grad[0]};
        if (a->requires_grad) a->add_to_grad(g);
        if (b->requires_grad) b->add_to_grad(g);
    };
    return out;
}

TensorPtr scale_scalar(const TensorPtr& a, double k) {
    if (a->size() != 1) {
        throw std::invalid_argument("scale_scalar expects a scalar");
    }
    auto out = Tensor::scalar(k * a->data[0], a->requires_grad);
    out->parents = {a};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [a, k, wout]() {
        auto o = wout.lock();
        if (!o) return;
        if (a->requires_grad) {
            const double g[1] = {k * o->grad[0]};
            a->add_to_grad(g);
        }
    };
    return out;
}

TensorPtr slice_rows(const TensorPtr& x, std::int64_t begin, std::int64_t end) {
    if (x->shape.size() != 2) {
        throw std::invalid_argument("slice_rows expects a 2-D tensor, got " + shape_str(x->shape));
    }
    const std::int64_t rows = x->shape[0];
    const std::int64_t cols = x->shape[1];
    if (begin < 0 || end > rows || begin >= end) {
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") for " + std::to_string(rows) + " rows");
    }
    std::vector<double> v(static_cast<std::size_t>((end - begin) * cols));
    std::copy(x->data.begin() + begin * cols, x->data.begin() + end * cols, v.begin());
    auto out = Tensor::make({end - begin, cols}, std::move(v), x->requires_grad);
    out->parents = {x};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [x, begin, cols, wout]() {
        auto o = wout.lock();
        if (!o || !x->requires_grad) return;
        x->ensure_grad();
        const std::int64_t n = o->size();
        for (std::int64_t i = 0; i < n; ++i) {
            x->grad[static_cast<std::size_t>(begin * cols + i)] += o->grad[static_cast<std::size_t>(i)];
        }
    };
    return out;
}

TensorPtr reshape_copy(const TensorPtr& x, Shape shape) {
    if (numel(shape) != x->size()) {
        throw std::invalid_argument("reshape: " + shape_str(x->shape) + " to " + shape_str(shape) +
                                    " changes element count");
    }
    auto out = Tensor::make(std::move(shape), x->data, x->requires_grad);
    if (!x->requires_grad) return out;
    out->parents = {x};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [x, wout]() {
        auto o = wout.lock();
        if (!o) return;
        x->add_to_grad(o->grad);
    };
    return out;
}

}  // namespace deepclust
