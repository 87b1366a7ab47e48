#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deepclust {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major f64 tensor, doubling as a reverse-mode graph node.
// Parents are held by shared_ptr so the recorded graph stays alive as long
// as the loss does; parameters are long-lived leaves.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized like data once touched, else empty

    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;  // empty for leaves

    static TensorPtr make(Shape shape, std::vector<double> values, bool requires_grad = false);
    static TensorPtr zeros(Shape shape, bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    double item() const;

    void ensure_grad();
    void zero_grad();
    void add_to_grad(std::span<const double> g);

    // Drops graph edges, keeping values (used when a node outlives a step).
    void detach_();
};

// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1, then
// runs node backward functions in reverse topological order. Throws if the
// loss is not scalar.
void backward(const TensorPtr& loss);

bool all_finite(std::span<const double> values);

// Sums per-element partials over [0, count) with recursive midpoint
// splitting: pairwise_sum over 2N identical halves equals exactly twice the
// N-element sum, which the consistency-loss null check and the batch-size
// invariance of batch statistics rely on. `fill(i, out)` must overwrite
// `out` with element i's partial.
void pairwise_sum(std::int64_t count, std::span<double> out,
                  const std::function<void(std::int64_t, std::span<double>)>& fill);

// --- small generic graph ops used by the loss plumbing ---

// c = a + b on scalars (graph-recorded).
TensorPtr add_scalars(const TensorPtr& a, const TensorPtr& b);
// c = k * a on a scalar (graph-recorded).
TensorPtr scale_scalar(const TensorPtr& a, double k);
// Rows [begin, end) of a 2-D tensor (graph-recorded; backward scatters).
TensorPtr slice_rows(const TensorPtr& x, std::int64_t begin, std::int64_t end);
// Same data, new shape (graph-recorded copy).
TensorPtr reshape_copy(const TensorPtr& x, Shape shape);

}  // namespace deepclust
