#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "deepclust/augment.hpp"
#include "deepclust/corpus.hpp"
#include "deepclust/layers.hpp"
#include "deepclust/tensor.hpp"
#include "deepclust/weights_io.hpp"

namespace deepclust {

enum class LossMode : std::uint8_t { Mse, MseCcl };
const char* loss_mode_name(LossMode mode);
LossMode loss_mode_from_name(const std::string& name);

struct CaeConfig {
    std::int64_t input_channels = 3;
    std::int64_t input_size = 64;  // square, divisible by 16
    std::int64_t embedding_dim = 10;
    std::vector<std::int64_t> widths = {32, 64, 128, 256};  // one per VGG block
};

// Convolutional autoencoder: four VGG blocks (two 3x3 convs with batch norm
// before ReLU, then 2x2 max pool) into a dense bottleneck; the decoder
// mirrors with stride-2 transposed convolutions and a sigmoid output layer.
class CaeModel {
public:
    CaeModel(const CaeConfig& config, std::uint64_t seed);

    TensorPtr encode(const TensorPtr& batch, Mode mode);
    TensorPtr decode(const TensorPtr& embeddings, Mode mode);

    std::vector<TensorPtr> parameters() const;
    std::vector<TensorPtr> encoder_parameters() const;

    const CaeConfig& config() const { return config_; }

    void save(WeightsFile& wf) const;
    void load(const WeightsFile& wf);

private:
    CaeConfig config_;
    std::vector<Layer> encoder_;
    std::vector<Layer> decoder_;
    Shape pre_flatten_shape_;  // (widths.back(), s/16, s/16)
};

// Batch tensor (B,3,H,W) from corpus images; values are exact f32->f64.
TensorPtr batch_tensor(const std::vector<const Image*>& images);

// Mean squared error over every element of the batch (graph-recorded).
// Per-sample partial sums combine pairwise over the leading dimension.
TensorPtr mse_loss(const TensorPtr& x, const TensorPtr& reconstruction);

// Student-t soft assignment rows p(k|i) (pure, no graph).
// p(k|i) ~ (1 + ||z_i - mu_k||^2 / alpha)^(-(alpha+1)/2), row-normalized.
std::vector<double> soft_assign(const std::vector<double>& z, std::int64_t n, std::int64_t dim,
                                const std::vector<double>& centers, std::int64_t k, double alpha);

// Graph node over embeddings and centers; gradients flow to both.
TensorPtr student_t_assign(const TensorPtr& z, const TensorPtr& centers, double alpha);

// Consistency constraint loss (1/(N K)) sum |p - p_t| (graph-recorded).
TensorPtr ccl_loss(const TensorPtr& p_original, const TensorPtr& p_transformed);

struct PretrainConfig {
    LossMode loss_mode = LossMode::Mse;
    std::vector<TransformSpec> specs;  // counterpart transforms for CCL
    std::int64_t epochs = 500;
    std::int64_t batch_size = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::int64_t cluster_count = 10;
    double alpha = 1.0;
    double warmup_fraction = 0.1;  // MSE-only epochs before center init
    bool record_steps = false;
};

struct LossPoint {
    double mse = 0.0;
    double ccl = 0.0;
    double total = 0.0;
};

struct PretrainResult {
    std::vector<LossPoint> epochs;         // per-epoch means
    std::vector<LossPoint> steps;          // populated when record_steps
    TensorPtr centers;                     // K x embedding_dim, null in MSE mode
};

// Adam, shuffled mini-batches. In MSE+CCL mode: MSE-only warmup, K-means
// center initialization on the current embeddings, then joint optimization
// of MSE + CCL with every batch forwarding originals and freshly drawn
// transformed counterparts together (shared batch statistics).
PretrainResult pretrain(CaeModel& model, const TrainView& data, const PretrainConfig& config);

// Eval-mode embeddings of the whole view, row-major N x embedding_dim.
std::vector<double> embed_dataset(CaeModel& model, const TrainView& data,
                                  std::int64_t chunk = 256);

}  // namespace deepclust
