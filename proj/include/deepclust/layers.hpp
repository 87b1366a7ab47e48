#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepclust/rng.hpp"
#include "deepclust/tensor.hpp"

namespace deepclust {

enum class LayerKind : std::uint8_t {
    Conv,
    ConvTranspose,
    BatchNorm,
    Relu,
    Sigmoid,
    MaxPool,
    Dense,
    Flatten,
};

enum class Mode : std::uint8_t { Train, Eval };

const char* layer_kind_name(LayerKind kind);

// While a guard is alive, layer forwards skip graph recording (embedding
// extraction, evaluation). Nesting is fine.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

struct LayerSpec {
    LayerKind kind;
    // conv / conv_transpose / max_pool geometry (square kernels)
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t kernel = 0;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t output_padding = 0;  // conv_transpose only
    // dense
    std::int64_t in_features = 0;
    std::int64_t out_features = 0;
    // batch_norm (acts on in_channels)
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;  // weight of the fresh batch statistic

    static LayerSpec conv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                          std::int64_t stride = 1, std::int64_t padding = 0);
    static LayerSpec conv_transpose(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t padding,
                                    std::int64_t output_padding = 0);
    static LayerSpec batch_norm(std::int64_t channels);
    static LayerSpec relu();
    static LayerSpec sigmoid();
    static LayerSpec max_pool(std::int64_t kernel, std::int64_t stride);
    static LayerSpec dense(std::int64_t in_features, std::int64_t out_features);
    static LayerSpec flatten();

    // Deterministic output shape for a given input shape; throws a
    // descriptive error naming the layer and both shapes on mismatch.
    Shape output_shape(const Shape& input) const;

    std::string describe() const;
};

// A layer spec plus its parameter/buffer tensors. Trainable parameters are
// graph leaves with requires_grad = true; batch-norm running statistics are
// plain buffers updated in train mode.
class Layer {
public:
    Layer(const LayerSpec& spec, RngStream* init_rng);

    TensorPtr forward(const TensorPtr& input, Mode mode);

    std::vector<TensorPtr> parameters() const;

    const LayerSpec& spec() const { return spec_; }

    TensorPtr weight;  // conv / conv_transpose / dense
    TensorPtr bias;    // conv / conv_transpose / dense
    TensorPtr gamma;   // batch_norm scale
    TensorPtr beta;    // batch_norm shift
    std::vector<double> running_mean;
    std::vector<double> running_var;

private:
    LayerSpec spec_;
};

}  // namespace deepclust
