#include "deepclust/cae.hpp"

#include <cmath>
#include <stdexcept>

#include "deepclust/adam.hpp"
#include "deepclust/cluster.hpp"
#include "deepclust/rng.hpp"

namespace deepclust {

const char* loss_mode_name(LossMode mode) {
    return mode == LossMode::Mse ? "mse" : "mse+ccl";
}

LossMode loss_mode_from_name(const std::string& name) {
    if (name == "mse") return LossMode::Mse;
    if (name == "mse+ccl" || name == "mse_ccl") return LossMode::MseCcl;
    throw std::invalid_argument("unknown loss mode: " + name);
}

CaeModel::CaeModel(const CaeConfig& config, std::uint64_t seed) : config_(config) {
    if (config.input_size % 16 != 0) {
        throw std::invalid_argument("input size " + std::to_string(config.input_size) +
                                    " is not divisible by 16");
    }
    if (config.widths.size() != 4) {
        throw std::invalid_argument("expected 4 block widths");
    }
    auto rng = RngStream::keyed({seed, rng_tag::kInit});

    std::int64_t in_ch = config.input_channels;
    for (std::int64_t width : config.widths) {
        encoder_.emplace_back(LayerSpec::conv(in_ch, width, 3, 1, 1), &rng);
        encoder_.emplace_back(LayerSpec::batch_norm(width), &rng);
        encoder_.emplace_back(LayerSpec::relu(), &rng);
        encoder_.emplace_back(LayerSpec::conv(width, width, 3, 1, 1), &rng);
        encoder_.emplace_back(LayerSpec::batch_norm(width), &rng);
        encoder_.emplace_back(LayerSpec::relu(), &rng);
        encoder_.emplace_back(LayerSpec::max_pool(2, 2), &rng);
        in_ch = width;
    }
    const std::int64_t bottom = config.input_size / 16;
    pre_flatten_shape_ = {config.widths.back(), bottom, bottom};
    const std::int64_t flat = config.widths.back() * bottom * bottom;
    encoder_.emplace_back(LayerSpec::flatten(), &rng);
    encoder_.emplace_back(LayerSpec::dense(flat, config.embedding_dim), &rng);

    decoder_.emplace_back(LayerSpec::dense(config.embedding_dim, flat), &rng);
    // Four stride-2 upsampling stages mirroring the encoder widths.
    const std::vector<std::int64_t>& w = config.widths;
    const std::int64_t stage_out[4] = {w[2], w[1], w[0], w[0]};
    std::int64_t ch = w[3];
    for (int i = 0; i < 4; ++i) {
        decoder_.emplace_back(LayerSpec::conv_transpose(ch, stage_out[i], 3, 2, 1, 1), &rng);
        decoder_.emplace_back(LayerSpec::batch_norm(stage_out[i]), &rng);
        decoder_.emplace_back(LayerSpec::relu(), &rng);
        ch = stage_out[i];
    }
    decoder_.emplace_back(LayerSpec::conv(ch, config.input_channels, 3, 1, 1), &rng);
    decoder_.emplace_back(LayerSpec::sigmoid(), &rng);
}

TensorPtr CaeModel::encode(const TensorPtr& batch, Mode mode) {
    if (batch->shape.size() != 4) {
        throw std::invalid_argument("encode expects a 4-D batch, got " + shape_str(batch->shape));
    }
    if (batch->shape[2] % 16 != 0 || batch->shape[3] % 16 != 0) {
        throw std::invalid_argument("encode: spatial dims must be divisible by 16, got " +
                                    shape_str(batch->shape));
    }
    TensorPtr x = batch;
    for (auto& layer : encoder_) {
        x = layer.forward(x, mode);
    }
    return x;
}

TensorPtr CaeModel::decode(const TensorPtr& embeddings, Mode mode) {
    if (embeddings->shape.size() != 2 || embeddings->shape[1] != config_.embedding_dim) {
        throw std::invalid_argument("decode expects [N," + std::to_string(config_.embedding_dim) +
                                    "] embeddings, got " + shape_str(embeddings->shape));
    }
    TensorPtr x = decoder_[0].forward(embeddings, mode);
    x = reshape_copy(x, {embeddings->shape[0], pre_flatten_shape_[0], pre_flatten_shape_[1],
                         pre_flatten_shape_[2]});
    for (std::size_t i = 1; i < decoder_.size(); ++i) {
        x = decoder_[i].forward(x, mode);
    }
    return x;
}

std::vector<TensorPtr> CaeModel::parameters() const {
    std::vector<TensorPtr> out = encoder_parameters();
    for (const auto& layer : decoder_) {
        for (auto& p : layer.parameters()) out.push_back(p);
    }
    return out;
}

std::vector<TensorPtr> CaeModel::encoder_parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& layer : encoder_) {
        for (auto& p : layer.parameters()) out.push_back(p);
    }
    return out;
}

namespace {

void save_layers(WeightsFile& wf, const std::vector<Layer>& layers, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        const std::string base = prefix + "." + std::to_string(i) + ".";
        if (l.weight) wf.add_f64(base + "weight", l.weight->shape, l.weight->data);
        if (l.bias) wf.add_f64(base + "bias", l.bias->shape, l.bias->data);
        if (l.gamma) {
            wf.add_f64(base + "gamma", l.gamma->shape, l.gamma->data);
            wf.add_f64(base + "beta", l.beta->shape, l.beta->data);
            wf.add_f64(base + "running_mean",
                       {static_cast<std::int64_t>(l.running_mean.size())}, l.running_mean);
            wf.add_f64(base + "running_var",
                       {static_cast<std::int64_t>(l.running_var.size())}, l.running_var);
        }
    }
}

void load_layers(const WeightsFile& wf, std::vector<Layer>& layers, const std::string& prefix) {
    auto fetch = [&](const std::string& name, TensorPtr& dst) {
        auto values = wf.f64(name);
        if (values.size() != dst->data.size()) {
            throw std::runtime_error("weights entry '" + name + "' has wrong size");
        }
        dst->data = std::move(values);
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Layer& l = layers[i];
        const std::string base = prefix + "." + std::to_string(i) + ".";
        if (l.weight) fetch(base + "weight", l.weight);
        if (l.bias) fetch(base + "bias", l.bias);
        if (l.gamma) {
            fetch(base + "gamma", l.gamma);
            fetch(base + "beta", l.beta);
            l.running_mean = wf.f64(base + "running_mean");
            l.running_var = wf.f64(base + "running_var");
        }
    }
}

}  // namespace

void CaeModel::save(WeightsFile& wf) const {
    save_layers(wf, encoder_, "enc");
    save_layers(wf, decoder_, "dec");
}

void CaeModel::load(const WeightsFile& wf) {
    load_layers(wf, encoder_, "enc");
    load_layers(wf, decoder_, "dec");
}

TensorPtr batch_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) {
        throw std::invalid_argument("batch_tensor: empty batch");
    }
    const Image& first = *images[0];
    const std::int64_t per = first.size();
    std::vector<double> values;
    values.reserve(images.size() * static_cast<std::size_t>(per));
    for (const Image* img : images) {
        if (img->size() != per || img->channels != first.channels) {
            throw std::invalid_argument("batch_tensor: inconsistent image shapes");
        }
        for (float p : img->pixels) {
            values.push_back(static_cast<double>(p));
        }
    }
    return Tensor::make({static_cast<std::int64_t>(images.size()), first.channels, first.height,
                         first.width},
                        std::move(values));
}

TensorPtr mse_loss(const TensorPtr& x, const TensorPtr& reconstruction) {
    if (x->shape != reconstruction->shape) {
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(x->shape) + " vs " +
                                    shape_str(reconstruction->shape));
    }
    const std::int64_t n = x->shape.empty() ? 1 : x->shape[0];
    const std::int64_t per = x->size() / n;
    const double count = static_cast<double>(x->size());

    double total[1] = {0.0};
    pairwise_sum(n, std::span<double>(total, 1), [&](std::int64_t i, std::span<double> acc) {
        const double* a = x->data.data() + i * per;
        const double* b = reconstruction->data.data() + i * per;
        double s = 0.0;
        for (std::int64_t j = 0; j < per; ++j) {
            const double d = a[j] - b[j];
            s += d * d;
        }
        acc[0] = s;
    });

    auto out = Tensor::scalar(total[0] / count);
    if (!grad_enabled() || (!x->requires_grad && !reconstruction->requires_grad)) return out;
    out->requires_grad = true;
    out->parents = {x, reconstruction};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [x, reconstruction, count, wout]() {
        auto o = wout.lock();
        if (!o) return;
        const double g = o->grad[0];
        const std::size_t sz = x->data.size();
        if (reconstruction->requires_grad) {
            std::vector<double> d(sz);
            for (std::size_t i = 0; i < sz; ++i) {
                d[i] = g * 2.0 * (reconstruction->data[i] - x->data[i]) / count;
            }
            reconstruction->add_to_grad(d);
        }
        if (x->requires_grad) {
            std::vector<double> d(sz);
            for (std::size_t i = 0; i < sz; ++i) {
                d[i] = g * 2.0 * (x->data[i] - reconstruction->data[i]) / count;
            }
            x->add_to_grad(d);
        }
    };
    return out;
}

std::vector<double> soft_assign(const std::vector<double>& z, std::int64_t n, std::int64_t dim,
                                const std::vector<double>& centers, std::int64_t k, double alpha) {
    if (k < 2) {
        throw std::invalid_argument("soft_assign: need at least 2 centers, got " + std::to_string(k));
    }
    if (static_cast<std::int64_t>(z.size()) != n * dim ||
        static_cast<std::int64_t>(centers.size()) != k * dim) {
        throw std::invalid_argument("soft_assign: embedding/center width mismatch");
    }
    const double exponent = -(alpha + 1.0) / 2.0;
    std::vector<double> p(static_cast<std::size_t>(n * k));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* zi = z.data() + i * dim;
        double row_sum = 0.0;
        for (std::int64_t c = 0; c < k; ++c) {
            const double* mu = centers.data() + c * dim;
            double d2 = 0.0;
            for (std::int64_t j = 0; j < dim; ++j) {
                const double d = zi[j] - mu[j];
                d2 += d * d;
            }
            const double q = std::pow(1.0 + d2 / alpha, exponent);
            p[static_cast<std::size_t>(i * k + c)] = q;
            row_sum += q;
        }
        for (std::int64_t c = 0; c < k; ++c) {
            p[static_cast<std::size_t>(i * k + c)] /= row_sum;
        }
    }
    return p;
}

TensorPtr student_t_assign(const TensorPtr& z, const TensorPtr& centers, double alpha) {
    if (z->shape.size() != 2 || centers->shape.size() != 2 || z->shape[1] != centers->shape[1]) {
        throw std::invalid_argument("student_t_assign: embedding width " + shape_str(z->shape) +
                                    " does not match centers " + shape_str(centers->shape));
    }
    const std::int64_t n = z->shape[0];
    const std::int64_t dim = z->shape[1];
    const std::int64_t k = centers->shape[0];

    auto values = soft_assign(z->data, n, dim, centers->data, k, alpha);
    auto out = Tensor::make({n, k}, std::move(values));
    if (!grad_enabled() || (!z->requires_grad && !centers->requires_grad)) return out;
    out->requires_grad = true;
    out->parents = {z, centers};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [z, centers, alpha, n, dim, k, wout]() {
        auto o = wout.lock();
        if (!o) return;
        const double* p = o->data.data();
        const double* gp = o->grad.data();
        std::vector<double> gz(z->data.size(), 0.0);
        std::vector<double> gc(centers->data.size(), 0.0);
        const double factor = -(alpha + 1.0) / alpha;  // d q / d d2 = factor/2 * q / u
        for (std::int64_t i = 0; i < n; ++i) {
            const double* zi = z->data.data() + i * dim;
            // row sum S_i of unnormalized kernels recovered from p and q:
            // q_ic = p_ic * S_i, so gradients can be written purely in p by
            // recomputing u_ic = 1 + d2/alpha.
            double dot = 0.0;
            for (std::int64_t c = 0; c < k; ++c) {
                dot += gp[i * k + c] * p[i * k + c];
            }
            for (std::int64_t c = 0; c < k; ++c) {
                const double* mu = centers->data.data() + c * dim;
                double d2 = 0.0;
                for (std::int64_t j = 0; j < dim; ++j) {
                    const double d = zi[j] - mu[j];
                    d2 += d * d;
                }
                const double u = 1.0 + d2 / alpha;
                // gq = (gp - dot) / S; gd2 = gq * (factor/2) * q / u
                //    = (gp - dot) * (factor/2) * p / u   (q/S = p)
                const double gd2 = (gp[i * k + c] - dot) * 0.5 * factor * p[i * k + c] / u;
                for (std::int64_t j = 0; j < dim; ++j) {
                    const double diff = zi[j] - mu[j];
                    gz[static_cast<std::size_t>(i * dim + j)] += gd2 * 2.0 * diff;
                    gc[static_cast<std::size_t>(c * dim + j)] -= gd2 * 2.0 * diff;
                }
            }
        }
        if (z->requires_grad) z->add_to_grad(gz);
        if (centers->requires_grad) centers->add_to_grad(gc);
    };
    return out;
}

TensorPtr ccl_loss(const TensorPtr& p_original, const TensorPtr& p_transformed) {
    if (p_original->shape != p_transformed->shape || p_original->shape.size() != 2) {
        throw std::invalid_argument("ccl_loss: shape mismatch " + shape_str(p_original->shape) +
                                    " vs " + shape_str(p_transformed->shape));
    }
    const std::int64_t n = p_original->shape[0];
    const std::int64_t k = p_original->shape[1];
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(k));

    double total = 0.0;
    for (std::size_t i = 0; i < p_original->data.size(); ++i) {
        total += std::abs(p_original->data[i] - p_transformed->data[i]);
    }
    auto out = Tensor::scalar(total * scale);
    if (!grad_enabled() || (!p_original->requires_grad && !p_transformed->requires_grad)) return out;
    out->requires_grad = true;
    out->parents = {p_original, p_transformed};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [p_original, p_transformed, scale, wout]() {
        auto o = wout.lock();
        if (!o) return;
        const double g = o->grad[0] * scale;
        const std::size_t sz = p_original->data.size();
        std::vector<double> d(sz);
        for (std::size_t i = 0; i < sz; ++i) {
            const double diff = p_original->data[i] - p_transformed->data[i];
            d[i] = diff > 0.0 ? g : (diff < 0.0 ? -g : 0.0);
        }
        if (p_original->requires_grad) p_original->add_to_grad(d);
        if (p_transformed->requires_grad) {
            for (double& v : d) v = -v;
            p_transformed->add_to_grad(d);
        }
    };
    return out;
}

std::vector<double> embed_dataset(CaeModel& model, const TrainView& data, std::int64_t chunk) {
    NoGradGuard no_grad;
    const std::int64_t n = data.size();
    const std::int64_t dim = model.config().embedding_dim;
    std::vector<double> out(static_cast<std::size_t>(n * dim));
    for (std::int64_t begin = 0; begin < n; begin += chunk) {
        const std::int64_t end = std::min(n, begin + chunk);
        std::vector<const Image*> images(data.pixels.begin() + begin, data.pixels.begin() + end);
        auto z = model.encode(batch_tensor(images), Mode::Eval);
        std::copy(z->data.begin(), z->data.end(), out.begin() + begin * dim);
    }
    return out;
}

PretrainResult pretrain(CaeModel& model, const TrainView& data, const PretrainConfig& config) {
    if (data.size() == 0) {
        throw std::invalid_argument("pretrain: empty dataset");
    }
    if (config.loss_mode == LossMode::MseCcl && config.specs.empty()) {
        throw std::invalid_argument(
            "pretrain: mse+ccl needs a non-empty transform set (consistency loss is undefined "
            "without transformed counterparts)");
    }
    const std::int64_t n = data.size();
    const std::int64_t batch = std::max<std::int64_t>(1, config.batch_size);
    const std::int64_t warmup =
        config.loss_mode == LossMode::MseCcl
            ? std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                            config.warmup_fraction * static_cast<double>(config.epochs)))
            : config.epochs;

    Adam optimizer(model.parameters(), {.lr = config.lr});
    std::unique_ptr<Adam> center_optimizer;
    PretrainResult result;

    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.loss_mode == LossMode::MseCcl && epoch == warmup && !result.centers) {
            auto embeddings = embed_dataset(model, data);
            auto km = kmeans(embeddings, n, model.config().embedding_dim, config.cluster_count,
                             config.seed);
            result.centers = Tensor::make({config.cluster_count, model.config().embedding_dim},
                                          km.centers, true);
            center_optimizer = std::make_unique<Adam>(std::vector<TensorPtr>{result.centers},
                                                      AdamConfig{.lr = config.lr});
        }

        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        auto shuffle_rng = RngStream::keyed({config.seed, rng_tag::kShuffle,
                                             static_cast<std::uint64_t>(epoch)});
        shuffle_rng.shuffle(order);

        LossPoint epoch_sum;
        std::int64_t step_count = 0;
        for (std::int64_t begin = 0; begin < n; begin += batch) {
            const std::int64_t end = std::min(n, begin + batch);
            std::vector<const Image*> images;
            std::vector<std::int64_t> ids;
            for (std::int64_t i = begin; i < end; ++i) {
                images.push_back(data.pixels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
                ids.push_back(data.sample_ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }

            LossPoint point;
            TensorPtr total;
            if (config.loss_mode == LossMode::Mse || epoch < warmup) {
                auto x = batch_tensor(images);
                auto xr = model.decode(model.encode(x, Mode::Train), Mode::Train);
                total = mse_loss(x, xr);
                point.mse = total->item();
                point.total = point.mse;
            } else {
                const std::int64_t b = static_cast<std::int64_t>(images.size());
                std::vector<Image> counterparts;
                counterparts.reserve(static_cast<std::size_t>(b));
                std::vector<const Image*> both = images;
                for (std::int64_t i = 0; i < b; ++i) {
                    const auto [kind, parameter] =
                        draw_pair_transform(ids[static_cast<std::size_t>(i)], epoch, config.seed,
                                            config.specs);
                    counterparts.push_back(
                        apply_affine(*images[static_cast<std::size_t>(i)], kind, parameter));
                }
                for (const Image& img : counterparts) both.push_back(&img);

                auto x = batch_tensor(both);
                auto z = model.encode(x, Mode::Train);
                auto xr = model.decode(z, Mode::Train);
                auto mse = mse_loss(x, xr);
                auto p = student_t_assign(z, result.centers, config.alpha);
                auto ccl = ccl_loss(slice_rows(p, 0, b), slice_rows(p, b, 2 * b));
                total = add_scalars(mse, ccl);
                point.mse = mse->item();
                point.ccl = ccl->item();
                point.total = total->item();
            }
            if (!std::isfinite(point.total)) {
                throw std::runtime_error("pretrain: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " +
                                         std::to_string(step_count));
            }

            backward(total);
            optimizer.step();
            optimizer.zero_grad();
            if (center_optimizer) {
                center_optimizer->step();
                result.centers->zero_grad();
            }

            epoch_sum.mse += point.mse;
            epoch_sum.ccl += point.ccl;
            epoch_sum.total += point.total;
            ++step_count;
            if (config.record_steps) {
                result.steps.push_back(point);
            }
        }
        result.epochs.push_back({epoch_sum.mse / static_cast<double>(step_count),
                                 epoch_sum.ccl / static_cast<double>(step_count),
                                 epoch_sum.total / static_cast<double>(step_count)});
    }
    return result;
}

}  // namespace deepclust
