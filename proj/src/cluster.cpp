#include "deepclust/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "deepclust/adam.hpp"
#include "deepclust/rng.hpp"

namespace deepclust {

namespace {

double squared_distance(const double* a, const double* b, std::int64_t dim) {
    double s = 0.0;
    for (std::int64_t j = 0; j < dim; ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

std::int64_t count_distinct(const std::vector<double>& points, std::int64_t n, std::int64_t dim) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return std::lexicographical_compare(points.begin() + a * dim, points.begin() + (a + 1) * dim,
                                            points.begin() + b * dim, points.begin() + (b + 1) * dim);
    });
    std::int64_t distinct = n == 0 ? 0 : 1;
    for (std::int64_t i = 1; i < n; ++i) {
        if (!std::equal(points.begin() + idx[static_cast<std::size_t>(i)] * dim,
                        points.begin() + (idx[static_cast<std::size_t>(i)] + 1) * dim,
                        points.begin() + idx[static_cast<std::size_t>(i - 1)] * dim)) {
            ++distinct;
        }
    }
    return distinct;
}

struct LloydRun {
    std::vector<double> centers;
    std::vector<std::int32_t> assignments;
    double inertia = 0.0;
    std::int64_t iterations = 0;
    std::vector<double> inertia_trace;
};

LloydRun lloyd_from_kmeanspp(const std::vector<double>& points, std::int64_t n, std::int64_t dim,
                             std::int64_t k, RngStream& rng, std::int64_t max_iter) {
    LloydRun run;
    run.centers.assign(static_cast<std::size_t>(k * dim), 0.0);

    // k-means++ seeding: first center uniform, then D^2 sampling.
    std::vector<double> min_d2(static_cast<std::size_t>(n),
                               std::numeric_limits<double>::infinity());
    const std::int64_t first = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(n)));
    std::copy(points.begin() + first * dim, points.begin() + (first + 1) * dim, run.centers.begin());
    for (std::int64_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double d2 = squared_distance(points.data() + i * dim,
                                               run.centers.data() + (c - 1) * dim, dim);
            auto& slot = min_d2[static_cast<std::size_t>(i)];
            if (d2 < slot) slot = d2;
            total += slot;
        }
        std::int64_t pick = 0;
        if (total > 0.0) {
            const double target = rng.next_double() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::int64_t i = 0; i < n; ++i) {
                acc += min_d2[static_cast<std::size_t>(i)];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(n)));
        }
        std::copy(points.begin() + pick * dim, points.begin() + (pick + 1) * dim,
                  run.centers.begin() + c * dim);
    }

    run.assignments.assign(static_cast<std::size_t>(n), -1);
    std::vector<std::int32_t> previous(static_cast<std::size_t>(n), -1);
    std::vector<double> sums(static_cast<std::size_t>(k * dim));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k));

    for (std::int64_t iter = 0; iter < max_iter; ++iter) {
        // Assignment step; ties break toward the lower center index.
        double inertia = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::int32_t best_c = 0;
            for (std::int64_t c = 0; c < k; ++c) {
                const double d2 = squared_distance(points.data() + i * dim,
                                                   run.centers.data() + c * dim, dim);
                if (d2 < best) {
                    best = d2;
                    best_c = static_cast<std::int32_t>(c);
                }
            }
            run.assignments[static_cast<std::size_t>(i)] = best_c;
            inertia += best;
        }
        run.inertia = inertia;
        run.inertia_trace.push_back(inertia);
        run.iterations = iter + 1;
        if (run.assignments == previous) {
            break;
        }
        previous = run.assignments;

        // Update step: centers move to member means.
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t c = run.assignments[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(c)];
            for (std::int64_t j = 0; j < dim; ++j) {
                sums[static_cast<std::size_t>(c * dim + j)] +=
                    points[static_cast<std::size_t>(i * dim + j)];
            }
        }
        for (std::int64_t c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                for (std::int64_t j = 0; j < dim; ++j) {
                    run.centers[static_cast<std::size_t>(c * dim + j)] =
                        sums[static_cast<std::size_t>(c * dim + j)] * inv;
                }
            } else {
                // Re-seed an empty cluster to the point farthest from its
                // assigned center.
                double worst = -1.0;
                std::int64_t worst_i = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t ci = run.assignments[static_cast<std::size_t>(i)];
                    const double d2 = squared_distance(points.data() + i * dim,
                                                       run.centers.data() + ci * dim, dim);
                    if (d2 > worst) {
                        worst = d2;
                        worst_i = i;
                    }
                }
                std::copy(points.begin() + worst_i * dim, points.begin() + (worst_i + 1) * dim,
                          run.centers.begin() + c * dim);
            }
        }
    }
    return run;
}

constexpr std::int64_t kKMeansRestarts = 8;

}  // namespace

KMeansResult kmeans(const std::vector<double>& points, std::int64_t n, std::int64_t dim,
                    std::int64_t k, std::uint64_t seed, std::int64_t max_iter) {
    if (n <= 0 || dim <= 0 || static_cast<std::int64_t>(points.size()) != n * dim) {
        throw std::invalid_argument("kmeans: bad point matrix");
    }
    if (k <= 0) {
        throw std::invalid_argument("kmeans: k must be positive");
    }
    if (k > count_distinct(points, n, dim)) {
        throw std::invalid_argument("kmeans: k = " + std::to_string(k) +
                                    " exceeds the number of distinct points");
    }

    LloydRun best;
    bool have_best = false;
    for (std::int64_t r = 0; r < kKMeansRestarts; ++r) {
        auto rng = RngStream::keyed({seed, rng_tag::kKMeans, static_cast<std::uint64_t>(r)});
        LloydRun run = lloyd_from_kmeanspp(points, n, dim, k, rng, max_iter);
        if (!have_best || run.inertia < best.inertia) {
            best = std::move(run);
            have_best = true;
        }
    }

    KMeansResult result;
    result.centers = std::move(best.centers);
    result.k = k;
    result.dim = dim;
    result.assignments = std::move(best.assignments);
    result.inertia = best.inertia;
    result.iterations = best.iterations;
    result.inertia_trace = std::move(best.inertia_trace);
    return result;
}

std::vector<double> target_distribution(const std::vector<double>& p, std::int64_t n,
                                        std::int64_t k) {
    if (static_cast<std::int64_t>(p.size()) != n * k) {
        throw std::invalid_argument("target_distribution: bad matrix size");
    }
    std::vector<double> freq(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < k; ++c) {
            freq[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(i * k + c)];
        }
    }
    for (std::int64_t c = 0; c < k; ++c) {
        if (freq[static_cast<std::size_t>(c)] == 0.0) {
            throw std::runtime_error("target_distribution: soft cluster " + std::to_string(c) +
                                     " is empty (zero column)");
        }
    }
    std::vector<double> t(static_cast<std::size_t>(n * k));
    for (std::int64_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::int64_t c = 0; c < k; ++c) {
            const double v = p[static_cast<std::size_t>(i * k + c)];
            const double u = v * v / freq[static_cast<std::size_t>(c)];
            t[static_cast<std::size_t>(i * k + c)] = u;
            row_sum += u;
        }
        for (std::int64_t c = 0; c < k; ++c) {
            t[static_cast<std::size_t>(i * k + c)] /= row_sum;
        }
    }
    return t;
}

double kl_loss(const std::vector<double>& target, const std::vector<double>& p, std::int64_t n,
               std::int64_t k) {
    if (target.size() != p.size() || static_cast<std::int64_t>(p.size()) != n * k) {
        throw std::invalid_argument("kl_loss: shape mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double t = target[i];
        if (t == 0.0) continue;
        if (p[i] == 0.0) {
            throw std::runtime_error("kl_loss: infinite divergence (p = 0 where t > 0)");
        }
        total += t * std::log(t / p[i]);
    }
    return total;
}

TensorPtr kl_div_node(const std::vector<double>& target, const TensorPtr& p) {
    if (p->shape.size() != 2) {
        throw std::invalid_argument("kl_div_node: expected 2-D soft assignments");
    }
    const std::int64_t n = p->shape[0];
    const std::int64_t k = p->shape[1];
    const double value = kl_loss(target, p->data, n, k);
    auto out = Tensor::scalar(value);
    if (!grad_enabled() || !p->requires_grad) return out;
    out->requires_grad = true;
    out->parents = {p};
    std::weak_ptr<Tensor> wout = out;
    out->backward_fn = [p, target, wout]() {
        auto o = wout.lock();
        if (!o) return;
        const double g = o->grad[0];
        std::vector<double> d(p->data.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = target[i] == 0.0 ? 0.0 : -g * target[i] / p->data[i];
        }
        p->add_to_grad(d);
    };
    return out;
}

const char* finetune_method_name(FinetuneMethod method) {
    return method == FinetuneMethod::Dec ? "dec" : "idec";
}

FinetuneMethod finetune_method_from_name(const std::string& name) {
    if (name == "dec") return FinetuneMethod::Dec;
    if (name == "idec") return FinetuneMethod::Idec;
    throw std::invalid_argument("unknown finetune method: " + name);
}

namespace {

std::vector<std::int32_t> hard_assignments(const std::vector<double>& p, std::int64_t n,
                                           std::int64_t k) {
    std::vector<std::int32_t> a(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = p.data() + i * k;
        std::int32_t best = 0;
        for (std::int64_t c = 1; c < k; ++c) {
            if (row[c] > row[best]) best = static_cast<std::int32_t>(c);
        }
        a[static_cast<std::size_t>(i)] = best;
    }
    return a;
}

}  // namespace

FinetuneResult finetune(CaeModel& model, const TensorPtr& centers, const TrainView& data,
                        const FinetuneConfig& config) {
    if (!centers || centers->shape.size() != 2 ||
        centers->shape[1] != model.config().embedding_dim) {
        throw std::invalid_argument("finetune: centers must be K x embedding_dim");
    }
    if (data.size() == 0) {
        throw std::invalid_argument("finetune: empty dataset");
    }
    const std::int64_t n = data.size();
    const std::int64_t k = centers->shape[0];
    const std::int64_t dim = model.config().embedding_dim;
    const std::int64_t batch = std::max<std::int64_t>(1, config.batch_size);

    std::vector<TensorPtr> params = config.method == FinetuneMethod::Dec
                                        ? model.encoder_parameters()
                                        : model.parameters();
    params.push_back(centers);
    Adam optimizer(params, {.lr = config.lr});

    FinetuneResult result;
    std::vector<double> target;                 // frozen between refreshes, n x k
    std::vector<std::int32_t> prev_assignments; // at the previous refresh

    auto refresh = [&]() -> double {
        auto z = embed_dataset(model, data);
        auto p = soft_assign(z, n, dim, centers->data, k, config.alpha);
        target = target_distribution(p, n, k);
        auto assignments = hard_assignments(p, n, k);
        double changed_fraction = 1.0;
        if (!prev_assignments.empty()) {
            std::int64_t changed = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                if (assignments[static_cast<std::size_t>(i)] !=
                    prev_assignments[static_cast<std::size_t>(i)]) {
                    ++changed;
                }
            }
            changed_fraction = static_cast<double>(changed) / static_cast<double>(n);
        }
        prev_assignments = assignments;
        result.assignment_history.push_back(std::move(assignments));
        return changed_fraction;
    };

    refresh();  // initial target and assignment snapshot

    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.refresh_interval > 0 && epoch > 0 && epoch % config.refresh_interval == 0) {
            const double changed = refresh();
            if (changed < config.stop_tolerance) {
                result.early_stopped = true;
                break;
            }
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
            const std::int64_t b = end - begin;
            std::vector<const Image*> images;
            std::vector<double> batch_target(static_cast<std::size_t>(b * k));
            for (std::int64_t i = 0; i < b; ++i) {
                const std::int64_t row = order[static_cast<std::size_t>(begin + i)];
                images.push_back(data.pixels[static_cast<std::size_t>(row)]);
                std::copy(target.begin() + row * k, target.begin() + (row + 1) * k,
                          batch_target.begin() + i * k);
            }

            auto x = batch_tensor(images);
            auto z = model.encode(x, Mode::Train);
            auto p = student_t_assign(z, centers, config.alpha);
            auto kl = kl_div_node(batch_target, p);

            LossPoint point;
            TensorPtr total;
            if (config.method == FinetuneMethod::Dec) {
                total = kl;
                point.ccl = kl->item();
                point.total = point.ccl;
            } else {
                auto xr = model.decode(z, Mode::Train);
                auto mse = mse_loss(x, xr);
                total = add_scalars(mse, scale_scalar(kl, config.gamma));
                point.mse = mse->item();
                point.ccl = kl->item();
                point.total = total->item();
            }
            if (!std::isfinite(point.total)) {
                throw std::runtime_error("finetune: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " +
                                         std::to_string(step_count));
            }
            backward(total);
            optimizer.step();
            optimizer.zero_grad();

            epoch_sum.mse += point.mse;
            epoch_sum.ccl += point.ccl;
            epoch_sum.total += point.total;
            ++step_count;
            if (config.record_steps) result.steps.push_back(point);
        }
        result.epochs.push_back({epoch_sum.mse / static_cast<double>(step_count),
                                 epoch_sum.ccl / static_cast<double>(step_count),
                                 epoch_sum.total / static_cast<double>(step_count)});
        result.epochs_run = epoch + 1;
    }

    refresh();  // final assignment snapshot
    return result;
}

}  // namespace deepclust
