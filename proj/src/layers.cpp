#include "deepclust/layers.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace deepclust {

namespace {

thread_local int g_no_grad_depth = 0;

// Per-sample im2col for plane set (C,H,W) -> col (C*K*K, Ho*Wo).
// Out-of-bounds source positions contribute zero.
void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t K,
            std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, double* col) {
    const std::int64_t HW = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c) {
        const double* plane = x + c * H * W;
        for (std::int64_t kh = 0; kh < K; ++kh) {
            for (std::int64_t kw = 0; kw < K; ++kw) {
                double* row = col + ((c * K + kh) * K + kw) * HW;
                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                    const std::int64_t hi = ho * stride - pad + kh;
                    double* out = row + ho * Wo;
                    if (hi < 0 || hi >= H) {
                        std::fill(out, out + Wo, 0.0);
                        continue;
                    }
                    const double* src = plane + hi * W;
                    for (std::int64_t wo = 0; wo < Wo; ++wo) {
                        const std::int64_t wi = wo * stride - pad + kw;
                        out[wo] = (wi >= 0 && wi < W) ? src[wi] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add col (C*K*K, Ho*Wo) back onto (C,H,W).
void col2im_add(const double* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t K,
                std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, double* x) {
    const std::int64_t HW = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c) {
        double* plane = x + c * H * W;
        for (std::int64_t kh = 0; kh < K; ++kh) {
            for (std::int64_t kw = 0; kw < K; ++kw) {
                const double* row = col + ((c * K + kh) * K + kw) * HW;
                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                    const std::int64_t hi = ho * stride - pad + kh;
                    if (hi < 0 || hi >= H) continue;
                    double* dst = plane + hi * W;
                    const double* src = row + ho * Wo;
                    for (std::int64_t wo = 0; wo < Wo; ++wo) {
                        const std::int64_t wi = wo * stride - pad + kw;
                        if (wi >= 0 && wi < W) {
                            dst[wi] += src[wo];
                        }
                    }
                }
            }
        }
    }
}

void gemm(bool trans_a, bool trans_b, std::int64_t M, std::int64_t N, std::int64_t K, double alpha,
          const double* A, std::int64_t lda, const double* B, std::int64_t ldb, double beta,
          double* C, std::int64_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(M), static_cast<int>(N),
                static_cast<int>(K), alpha, A, static_cast<int>(lda), B, static_cast<int>(ldb),
                beta, C, static_cast<int>(ldc));
}

std::string mismatch(const LayerSpec& spec, const Shape& input, const std::string& what) {
    return spec.describe() + ": " + what + " (input " + shape_str(input) + ")";
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::ConvTranspose: return "conv_transpose";
        case LayerKind::BatchNorm: return "batch_norm";
        case LayerKind::Relu: return "relu";
        case LayerKind::Sigmoid: return "sigmoid";
        case LayerKind::MaxPool: return "max_pool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

LayerSpec LayerSpec::conv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                          std::int64_t stride, std::int64_t padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::conv_transpose(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t padding,
                                    std::int64_t output_padding) {
    LayerSpec s;
    s.kind = LayerKind::ConvTranspose;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.output_padding = output_padding;
    return s;
}

LayerSpec LayerSpec::batch_norm(std::int64_t channels) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.in_channels = channels;
    s.out_channels = channels;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::sigmoid() {
    LayerSpec s;
    s.kind = LayerKind::Sigmoid;
    return s;
}

LayerSpec LayerSpec::max_pool(std::int64_t kernel, std::int64_t stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::dense(std::int64_t in_features, std::int64_t out_features) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_features = in_features;
    s.out_features = out_features;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

std::string LayerSpec::describe() const {
    std::string d = layer_kind_name(kind);
    switch (kind) {
        case LayerKind::Conv:
        case LayerKind::ConvTranspose:
            d += "(" + std::to_string(in_channels) + "->" + std::to_string(out_channels) + ",k" +
                 std::to_string(kernel) + ",s" + std::to_string(stride) + ",p" +
                 std::to_string(padding) + ")";
            break;
        case LayerKind::BatchNorm:
            d += "(" + std::to_string(in_channels) + ")";
            break;
        case LayerKind::MaxPool:
            d += "(k" + std::to_string(kernel) + ",s" + std::to_string(stride) + ")";
            break;
        case LayerKind::Dense:
            d += "(" + std::to_string(in_features) + "->" + std::to_string(out_features) + ")";
            break;
        default:
            break;
    }
    return d;
}

Shape LayerSpec::output_shape(const Shape& input) const {
    switch (kind) {
        case LayerKind::Conv: {
            if (input.size() != 4) throw std::invalid_argument(mismatch(*this, input, "expected 4-D input"));
            const auto [N, C, H, W] = std::tuple{input[0], input[1], input[2], input[3]};
            if (C != in_channels)
                throw std::invalid_argument(mismatch(*this, input, "channel mismatch"));
            const std::int64_t Ho = (H + 2 * padding - kernel) / stride + 1;
            const std::int64_t Wo = (W + 2 * padding - kernel) / stride + 1;
            if (H + 2 * padding < kernel || W + 2 * padding < kernel)
                throw std::invalid_argument(mismatch(*this, input, "spatial size below kernel"));
            return {N, out_channels, Ho, Wo};
        }
        case LayerKind::ConvTranspose: {
            if (input.size() != 4) throw std::invalid_argument(mismatch(*this, input, "expected 4-D input"));
            if (input[1] != in_channels)
                throw std::invalid_argument(mismatch(*this, input, "channel mismatch"));
            const std::int64_t Ho = (input[2] - 1) * stride - 2 * padding + kernel + output_padding;
            const std::int64_t Wo = (input[3] - 1) * stride - 2 * padding + kernel + output_padding;
            if (Ho < 1 || Wo < 1)
                throw std::invalid_argument(mismatch(*this, input, "non-positive output size"));
            return {input[0], out_channels, Ho, Wo};
        }
        case LayerKind::BatchNorm: {
            if (input.size() != 4 || input[1] != in_channels)
                throw std::invalid_argument(mismatch(*this, input, "expected 4-D input with " +
                                                                       std::to_string(in_channels) +
                                                                       " channels"));
            return input;
        }
        case LayerKind::Relu:
        case LayerKind::Sigmoid:
            return input;
        case LayerKind::MaxPool: {
            if (input.size() != 4) throw std::invalid_argument(mismatch(*this, input, "expected 4-D input"));
            if (input[2] < kernel || input[3] < kernel)
                throw std::invalid_argument(mismatch(*this, input, "spatial size below kernel"));
            return {input[0], input[1], (input[2] - kernel) / stride + 1,
                    (input[3] - kernel) / stride + 1};
        }
        case LayerKind::Dense: {
            if (input.size() != 2 || input[1] != in_features)
                throw std::invalid_argument(mismatch(*this, input, "expected [N," +
                                                                       std::to_string(in_features) +
                                                                       "] input"));
            return {input[0], out_features};
        }
        case LayerKind::Flatten: {
            if (input.size() != 4) throw std::invalid_argument(mismatch(*this, input, "expected 4-D input"));
            return {input[0], input[1] * input[2] * input[3]};
        }
    }
    throw std::logic_error("unknown layer kind");
}

Layer::Layer(const LayerSpec& spec, RngStream* init_rng) : spec_(spec) {
    auto gaussian_init = [&](Shape shape, double stddev) {
        std::vector<double> v(static_cast<std::size_t>(numel(shape)));
        for (double& x : v) {
            x = init_rng->next_gaussian() * stddev;
        }
        return Tensor::make(std::move(shape), std::move(v), true);
    };
    switch (spec.kind) {
        case LayerKind::Conv: {
            const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_channels * spec.kernel * spec.kernel));
            weight = gaussian_init({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, stddev);
            bias = Tensor::zeros({spec.out_channels}, true);
            break;
        }
        case LayerKind::ConvTranspose: {
            const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_channels * spec.kernel * spec.kernel));
            weight = gaussian_init({spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}, stddev);
            bias = Tensor::zeros({spec.out_channels}, true);
            break;
        }
        case LayerKind::Dense: {
            const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_features));
            weight = gaussian_init({spec.out_features, spec.in_features}, stddev);
            bias = Tensor::zeros({spec.out_features}, true);
            break;
        }
        case LayerKind::BatchNorm: {
            gamma = Tensor::make({spec.in_channels},
                                 std::vector<double>(static_cast<std::size_t>(spec.in_channels), 1.0), true);
            beta = Tensor::zeros({spec.in_channels}, true);
            running_mean.assign(static_cast<std::size_t>(spec.in_channels), 0.0);
            running_var.assign(static_cast<std::size_t>(spec.in_channels), 1.0);
            break;
        }
        default:
            break;
    }
}

std::vector<TensorPtr> Layer::parameters() const {
    std::vector<TensorPtr> out;
    for (const TensorPtr& p : {weight, bias, gamma, beta}) {
        if (p) out.push_back(p);
    }
    return out;
}

namespace {

TensorPtr forward_conv(const LayerSpec& spec, const TensorPtr& x, const TensorPtr& weight,
                       const TensorPtr& bias) {
    const Shape out_shape = spec.output_shape(x->shape);
    const std::int64_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Co = out_shape[1], Ho = out_shape[2], Wo = out_shape[3];
    const std::int64_t K = spec.kernel, stride = spec.stride, pad = spec.padding;
    const std::int64_t ckk = C * K * K;
    const std::int64_t hw = Ho * Wo;

    auto out = Tensor::zeros(out_shape);
    std::vector<double> col(static_cast<std::size_t>(ckk * hw));
    for (std::int64_t n = 0; n < N; ++n) {
        im2col(x->data.data() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, col.data());
        double* y = out->data.data() + n * Co * hw;
        gemm(false, false, Co, hw, ckk, 1.0, weight->data.data(), ckk, col.data(), hw, 0.0, y, hw);
        for (std::int64_t co = 0; co < Co; ++co) {
            const double b = bias->data[static_cast<std::size_t>(co)];
            double* row = y + co * hw;
            for (std::int64_t i = 0; i < hw; ++i) row[i] += b;
        }
    }

    if (!grad_enabled()) return out;
    out->requires_grad = x->requires_grad || weight->requires_grad || bias->requires_grad;
    if (!out->requires_grad) return out;
    out->parents = {x, weight, bias};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [=, spec = spec]() {
        auto o = wout.lock();
        if (!o) return;
        const double* dy = o->grad.data();

        if (weight->requires_grad) {
            std::vector<double> dw(weight->data.size());
            std::vector<double> colbuf(static_cast<std::size_t>(ckk * hw));
            pairwise_sum(N, dw, [&](std::int64_t n, std::span<double> acc) {
                im2col(x->data.data() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, colbuf.data());
                gemm(false, true, Co, ckk, hw, 1.0, dy + n * Co * hw, hw, colbuf.data(), hw, 0.0,
                     acc.data(), ckk);
            });
            weight->add_to_grad(dw);
        }
        if (bias->requires_grad) {
            std::vector<double> db(bias->data.size());
            pairwise_sum(N, db, [&](std::int64_t n, std::span<double> acc) {
                for (std::int64_t co = 0; co < Co; ++co) {
                    const double* row = dy + (n * Co + co) * hw;
                    double s = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i) s += row[i];
                    acc[static_cast<std::size_t>(co)] = s;
                }
            });
            bias->add_to_grad(db);
        }
        if (x->requires_grad) {
            std::vector<double> dx(x->data.size(), 0.0);
            std::vector<double> dcol(static_cast<std::size_t>(ckk * hw));
            for (std::int64_t n = 0; n < N; ++n) {
                gemm(true, false, ckk, hw, Co, 1.0, weight->data.data(), ckk, dy + n * Co * hw, hw,
                     0.0, dcol.data(), hw);
                col2im_add(dcol.data(), C, H, W, K, stride, pad, Ho, Wo, dx.data() + n * C * H * W);
            }
            x->add_to_grad(dx);
        }
    };
    return out;
}

TensorPtr forward_conv_transpose(const LayerSpec& spec, const TensorPtr& x, const TensorPtr& weight,
                                 const TensorPtr& bias) {
    const Shape out_shape = spec.output_shape(x->shape);
    const std::int64_t N = x->shape[0], C = x->shape[1], Hi = x->shape[2], Wi = x->shape[3];
    const std::int64_t Co = out_shape[1], Ho = out_shape[2], Wo = out_shape[3];
    const std::int64_t K = spec.kernel, stride = spec.stride, pad = spec.padding;
    const std::int64_t ckk = Co * K * K;  // col rows follow the *output* channels
    const std::int64_t hw_in = Hi * Wi;

    auto out = Tensor::zeros(out_shape);
    std::vector<double> col(static_cast<std::size_t>(ckk * hw_in));
    for (std::int64_t n = 0; n < N; ++n) {
        // weight is (Cin, Co*K*K) row-major; col = weight^T * x_n
        gemm(true, false, ckk, hw_in, C, 1.0, weight->data.data(), ckk,
             x->data.data() + n * C * hw_in, hw_in, 0.0, col.data(), hw_in);
        double* y = out->data.data() + n * Co * Ho * Wo;
        col2im_add(col.data(), Co, Ho, Wo, K, stride, pad, Hi, Wi, y);
        for (std::int64_t co = 0; co < Co; ++co) {
            const double b = bias->data[static_cast<std::size_t>(co)];
            double* row = y + co * Ho * Wo;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) row[i] += b;
        }
    }

    if (!grad_enabled()) return out;
    out->requires_grad = x->requires_grad || weight->requires_grad || bias->requires_grad;
    if (!out->requires_grad) return out;
    out->parents = {x, weight, bias};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [=, spec = spec]() {
        auto o = wout.lock();
        if (!o) return;
        const double* dy = o->grad.data();
        std::vector<double> dcol(static_cast<std::size_t>(ckk * hw_in));

        if (x->requires_grad || weight->requires_grad) {
            std::vector<double> dx;
            if (x->requires_grad) dx.assign(x->data.size(), 0.0);
            std::vector<double> dw;
            if (weight->requires_grad) dw.assign(weight->data.size(), 0.0);

            if (weight->requires_grad) {
                std::vector<double> colbuf(static_cast<std::size_t>(ckk * hw_in));
                pairwise_sum(N, dw, [&](std::int64_t n, std::span<double> acc) {
                    im2col(dy + n * Co * Ho * Wo, Co, Ho, Wo, K, stride, pad, Hi, Wi, colbuf.data());
                    gemm(false, true, C, ckk, hw_in, 1.0, x->data.data() + n * C * hw_in, hw_in,
                         colbuf.data(), hw_in, 0.0, acc.data(), ckk);
                });
                weight->add_to_grad(dw);
            }
            if (x->requires_grad) {
                for (std::int64_t n = 0; n < N; ++n) {
                    im2col(dy + n * Co * Ho * Wo, Co, Ho, Wo, K, stride, pad, Hi, Wi, dcol.data());
                    gemm(false, false, C, hw_in, ckk, 1.0, weight->data.data(), ckk, dcol.data(),
                         hw_in, 0.0, dx.data() + n * C * hw_in, hw_in);
                }
                x->add_to_grad(dx);
            }
        }
        if (bias->requires_grad) {
            std::vector<double> db(bias->data.size());
            pairwise_sum(N, db, [&](std::int64_t n, std::span<double> acc) {
                for (std::int64_t co = 0; co < Co; ++co) {
                    const double* row = dy + (n * Co + co) * Ho * Wo;
                    double s = 0.0;
                    for (std::int64_t i = 0; i < Ho * Wo; ++i) s += row[i];
                    acc[static_cast<std::size_t>(co)] = s;
                }
            });
            bias->add_to_grad(db);
        }
    };
    return out;
}

TensorPtr forward_batch_norm(const LayerSpec& spec, const TensorPtr& x, const TensorPtr& gamma,
                             const TensorPtr& beta, std::vector<double>& running_mean,
                             std::vector<double>& running_var, Mode mode) {
    spec.output_shape(x->shape);  // validates
    const std::int64_t N = x->shape[0], C = x->shape[1], HW = x->shape[2] * x->shape[3];
    const double count = static_cast<double>(N * HW);
    const double* xd = x->data.data();

    std::vector<double> mean(static_cast<std::size_t>(C));
    std::vector<double> var(static_cast<std::size_t>(C));
    if (mode == Mode::Train) {
        // Two-pass statistics; per-sample partials combined pairwise over the
        // batch so statistics are invariant to duplicating the batch.
        pairwise_sum(N, mean, [&](std::int64_t n, std::span<double> acc) {
            for (std::int64_t c = 0; c < C; ++c) {
                const double* row = xd + (n * C + c) * HW;
                double s = 0.0;
                for (std::int64_t i = 0; i < HW; ++i) s += row[i];
                acc[static_cast<std::size_t>(c)] = s;
            }
        });
        for (std::int64_t c = 0; c < C; ++c) mean[static_cast<std::size_t>(c)] /= count;
        pairwise_sum(N, var, [&](std::int64_t n, std::span<double> acc) {
            for (std::int64_t c = 0; c < C; ++c) {
                const double* row = xd + (n * C + c) * HW;
                const double mu = mean[static_cast<std::size_t>(c)];
                double s = 0.0;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const double d = row[i] - mu;
                    s += d * d;
                }
                acc[static_cast<std::size_t>(c)] = s;
            }
        });
        for (std::int64_t c = 0; c < C; ++c) var[static_cast<std::size_t>(c)] /= count;
        for (std::int64_t c = 0; c < C; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            running_mean[ci] = (1.0 - spec.bn_momentum) * running_mean[ci] + spec.bn_momentum * mean[ci];
            running_var[ci] = (1.0 - spec.bn_momentum) * running_var[ci] + spec.bn_momentum * var[ci];
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    std::vector<double> invstd(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + spec.bn_eps);
    }

    const bool record = grad_enabled() &&
                        (x->requires_grad || gamma->requires_grad || beta->requires_grad);
    auto out = Tensor::zeros(x->shape);
    std::vector<double> xhat;
    if (record) xhat.resize(x->data.size());
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            const double mu = mean[ci], is = invstd[ci];
            const double g = gamma->data[ci], b = beta->data[ci];
            const double* row = xd + (n * C + c) * HW;
            double* orow = out->data.data() + (n * C + c) * HW;
            if (record) {
                double* hrow = xhat.data() + (n * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const double h = (row[i] - mu) * is;
                    hrow[i] = h;
                    orow[i] = g * h + b;
                }
            } else {
                for (std::int64_t i = 0; i < HW; ++i) {
                    orow[i] = g * ((row[i] - mu) * is) + b;
                }
            }
        }
    }
    if (!record) return out;

    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    std::weak_ptr<Tensor> wout = out;
    const bool train = (mode == Mode::Train);
    out->backward_fn = [=, xhat = std::move(xhat), invstd = std::move(invstd)]() {
        auto o = wout.lock();
        if (!o) return;
        const double* dy = o->grad.data();

        // s1[c] = sum dy, s2[c] = sum dy*xhat, pairwise over samples.
        std::vector<double> s1(static_cast<std::size_t>(C)), s2(static_cast<std::size_t>(C));
        pairwise_sum(N, s1, [&](std::int64_t n, std::span<double> acc) {
            for (std::int64_t c = 0; c < C; ++c) {
                const double* row = dy + (n * C + c) * HW;
                double s = 0.0;
                for (std::int64_t i = 0; i < HW; ++i) s += row[i];
                acc[static_cast<std::size_t>(c)] = s;
            }
        });
        pairwise_sum(N, s2, [&](std::int64_t n, std::span<double> acc) {
            for (std::int64_t c = 0; c < C; ++c) {
                const double* drow = dy + (n * C + c) * HW;
                const double* hrow = xhat.data() + (n * C + c) * HW;
                double s = 0.0;
                for (std::int64_t i = 0; i < HW; ++i) s += drow[i] * hrow[i];
                acc[static_cast<std::size_t>(c)] = s;
            }
        });

        if (beta->requires_grad) beta->add_to_grad(s1);
        if (gamma->requires_grad) gamma->add_to_grad(s2);

        if (x->requires_grad) {
            std::vector<double> dx(x->data.size());
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const auto ci = static_cast<std::size_t>(c);
                    const double gs = gamma->data[ci] * invstd[ci];
                    const double* drow = dy + (n * C + c) * HW;
                    const double* hrow = xhat.data() + (n * C + c) * HW;
                    double* xrow = dx.data() + (n * C + c) * HW;
                    if (train) {
                        const double a = s1[ci] / count;
                        const double b = s2[ci] / count;
                        for (std::int64_t i = 0; i < HW; ++i) {
                            xrow[i] = gs * (drow[i] - a - hrow[i] * b);
                        }
                    } else {
                        for (std::int64_t i = 0; i < HW; ++i) {
                            xrow[i] = gs * drow[i];
                        }
                    }
                }
            }
            x->add_to_grad(dx);
        }
    };
    return out;
}

TensorPtr forward_relu(const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    }
    if (!grad_enabled() || !x->requires_grad) return out;
    out->requires_grad = true;
    out->parents = {x};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [x, wout]() {
        auto o = wout.lock();
        if (!o) return;
        std::vector<double> dx(x->data.size());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] = x->data[i] > 0.0 ? o->grad[i] : 0.0;
        }
        x->add_to_grad(dx);
    };
    return out;
}

TensorPtr forward_sigmoid(const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
    }
    if (!grad_enabled() || !x->requires_grad) return out;
    out->requires_grad = true;
    out->parents = {x};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [x, wout]() {
        auto o = wout.lock();
        if (!o) return;
        std::vector<double> dx(x->data.size());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double y = o->data[i];
            dx[i] = o->grad[i] * y * (1.0 - y);
        }
        x->add_to_grad(dx);
    };
    return out;
}

TensorPtr forward_max_pool(const LayerSpec& spec, const TensorPtr& x) {
    const Shape out_shape = spec.output_shape(x->shape);
    const std::int64_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Ho = out_shape[2], Wo = out_shape[3];
    const std::int64_t K = spec.kernel, stride = spec.stride;

    auto out = Tensor::zeros(out_shape);
    std::vector<std::int32_t> argmax(out->data.size());
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const double* plane = x->data.data() + (n * C + c) * H * W;
            double* oplane = out->data.data() + (n * C + c) * Ho * Wo;
            std::int32_t* aplane = argmax.data() + (n * C + c) * Ho * Wo;
            for (std::int64_t ho = 0; ho < Ho; ++ho) {
                for (std::int64_t wo = 0; wo < Wo; ++wo) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_idx = 0;
                    for (std::int64_t kh = 0; kh < K; ++kh) {
                        const std::int64_t hi = ho * stride + kh;
                        for (std::int64_t kw = 0; kw < K; ++kw) {
                            const std::int64_t wi = wo * stride + kw;
                            const double v = plane[hi * W + wi];
                            if (v > best) {
                                best = v;
                                best_idx = hi * W + wi;
                            }
                        }
                    }
                    oplane[ho * Wo + wo] = best;
                    aplane[ho * Wo + wo] = static_cast<std::int32_t>(best_idx);
                }
            }
        }
    }
    if (!grad_enabled() || !x->requires_grad) return out;
    out->requires_grad = true;
    out->parents = {x};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [=, argmax = std::move(argmax)]() {
        auto o = wout.lock();
        if (!o) return;
        std::vector<double> dx(x->data.size(), 0.0);
        const std::int64_t planes = N * C;
        for (std::int64_t p = 0; p < planes; ++p) {
            const double* drow = o->grad.data() + p * Ho * Wo;
            const std::int32_t* arow = argmax.data() + p * Ho * Wo;
            double* xrow = dx.data() + p * H * W;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) {
                xrow[arow[i]] += drow[i];
            }
        }
        x->add_to_grad(dx);
    };
    return out;
}

TensorPtr forward_dense(const LayerSpec& spec, const TensorPtr& x, const TensorPtr& weight,
                        const TensorPtr& bias) {
    const Shape out_shape = spec.output_shape(x->shape);
    const std::int64_t N = x->shape[0];
    const std::int64_t fin = spec.in_features, fout = spec.out_features;

    auto out = Tensor::zeros(out_shape);
    for (std::int64_t n = 0; n < N; ++n) {
        double* y = out->data.data() + n * fout;
        cblas_dgemv(CblasRowMajor, CblasNoTrans, static_cast<int>(fout), static_cast<int>(fin), 1.0,
                    weight->data.data(), static_cast<int>(fin), x->data.data() + n * fin, 1, 0.0, y, 1);
        for (std::int64_t i = 0; i < fout; ++i) y[i] += bias->data[static_cast<std::size_t>(i)];
    }
    if (!grad_enabled()) return out;
    out->requires_grad = x->requires_grad || weight->requires_grad || bias->requires_grad;
    if (!out->requires_grad) return out;
    out->parents = {x, weight, bias};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [=]() {
        auto o = wout.lock();
        if (!o) return;
        const double* dy = o->grad.data();
        if (weight->requires_grad) {
            std::vector<double> dw(weight->data.size());
            pairwise_sum(N, dw, [&](std::int64_t n, std::span<double> acc) {
                const double* g = dy + n * fout;
                const double* xn = x->data.data() + n * fin;
                for (std::int64_t i = 0; i < fout; ++i) {
                    for (std::int64_t j = 0; j < fin; ++j) {
                        acc[static_cast<std::size_t>(i * fin + j)] = g[i] * xn[j];
                    }
                }
            });
            weight->add_to_grad(dw);
        }
        if (bias->requires_grad) {
            std::vector<double> db(bias->data.size());
            pairwise_sum(N, db, [&](std::int64_t n, std::span<double> acc) {
                const double* g = dy + n * fout;
                std::copy(g, g + fout, acc.begin());
            });
            bias->add_to_grad(db);
        }
        if (x->requires_grad) {
            std::vector<double> dx(x->data.size());
            for (std::int64_t n = 0; n < N; ++n) {
                cblas_dgemv(CblasRowMajor, CblasTrans, static_cast<int>(fout), static_cast<int>(fin),
                            1.0, weight->data.data(), static_cast<int>(fin), dy + n * fout, 1, 0.0,
                            dx.data() + n * fin, 1);
            }
            x->add_to_grad(dx);
        }
    };
    return out;
}

TensorPtr forward_flatten(const LayerSpec& spec, const TensorPtr& x) {
    const Shape out_shape = spec.output_shape(x->shape);
    auto out = Tensor::make(out_shape, x->data);
    if (!grad_enabled() || !x->requires_grad) return out;
    out->requires_grad = true;
    out->parents = {x};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [x, wout]() {
        auto o = wout.lock();
        if (!o) return;
        x->add_to_grad(o->grad);
    };
    return out;
}

}  // namespace

TensorPtr Layer::forward(const TensorPtr& input, Mode mode) {
    switch (spec_.kind) {
        case LayerKind::Conv: return forward_conv(spec_, input, weight, bias);
        case LayerKind::ConvTranspose: return forward_conv_transpose(spec_, input, weight, bias);
        case LayerKind::BatchNorm:
            return forward_batch_norm(spec_, input, gamma, beta, running_mean, running_var, mode);
        case LayerKind::Relu: return forward_relu(input);
        case LayerKind::Sigmoid: return forward_sigmoid(input);
        case LayerKind::MaxPool: return forward_max_pool(spec_, input);
        case LayerKind::Dense: return forward_dense(spec_, input, weight, bias);
        case LayerKind::Flatten: return forward_flatten(spec_, input);
    }
    throw std::logic_error("unknown layer kind");
}

}  // namespace deepclust
