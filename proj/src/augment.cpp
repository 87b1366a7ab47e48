#include "deepclust/augment.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "deepclust/rng.hpp"

namespace deepclust {

const char* transform_kind_name(TransformKind kind) {
    switch (kind) {
        case TransformKind::Rot: return "rot";
        case TransformKind::Sher: return "sher";
        case TransformKind::Scal: return "scal";
    }
    return "?";
}

TransformKind transform_kind_from_name(const std::string& name) {
    if (name == "rot") return TransformKind::Rot;
    if (name == "sher") return TransformKind::Sher;
    if (name == "scal") return TransformKind::Scal;
    throw std::invalid_argument("unknown transform kind: " + name);
}

TransformTag tag_of(TransformKind kind) {
    switch (kind) {
        case TransformKind::Rot: return TransformTag::Rot;
        case TransformKind::Sher: return TransformTag::Sher;
        case TransformKind::Scal: return TransformTag::Scal;
    }
    return TransformTag::None;
}

TransformSpec TransformSpec::defaults(TransformKind kind) {
    switch (kind) {
        case TransformKind::Rot: return {kind, 0.0, 90.0};
        case TransformKind::Sher: return {kind, 0.0, 50.0};
        case TransformKind::Scal: return {kind, 0.5, 1.0};
    }
    throw std::invalid_argument("unknown transform kind");
}

bool TransformSpec::accepts(double parameter) const {
    if (kind == TransformKind::Scal) {
        return parameter >= min_param && parameter <= max_param;
    }
    // Signed magnitude for rotation and shear.
    const double mag = std::abs(parameter);
    return mag >= min_param && mag <= max_param;
}

std::vector<TransformSpec> parse_transform_set(const std::string& csv) {
    std::vector<TransformSpec> specs;
    if (csv.empty() || csv == "none") return specs;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        specs.push_back(TransformSpec::defaults(transform_kind_from_name(item)));
    }
    return specs;
}

namespace {

struct Affine2 {
    // inverse map: source = M * (dest - center) + center
    double m00, m01, m10, m11;
};

Affine2 inverse_map(TransformKind kind, double parameter) {
    constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
    switch (kind) {
        case TransformKind::Rot: {
            const double t = parameter * kDegToRad;
            const double c = std::cos(t), s = std::sin(t);
            // forward rotation by t; inverse rotates by -t
            return {c, s, -s, c};
        }
        case TransformKind::Sher: {
            // forward x' = x + tan(t) * y; inverse x = x' - tan(t) * y'
            const double t = std::tan(parameter * kDegToRad);
            return {1.0, -t, 0.0, 1.0};
        }
        case TransformKind::Scal: {
            const double inv = 1.0 / parameter;
            return {inv, 0.0, 0.0, inv};
        }
    }
    throw std::invalid_argument("unknown transform kind");
}

}  // namespace

Image apply_affine(const Image& img, TransformKind kind, double parameter, Sampling sampling) {
    const TransformSpec spec = TransformSpec::defaults(kind);
    if (!spec.accepts(parameter)) {
        throw std::invalid_argument(std::string("transform parameter out of range: ") +
                                    transform_kind_name(kind) + " " + std::to_string(parameter));
    }
    const Affine2 m = inverse_map(kind, parameter);
    const double cx = static_cast<double>(img.width - 1) / 2.0;
    const double cy = static_cast<double>(img.height - 1) / 2.0;

    Image out = make_image(img.channels, img.height, img.width);
    for (std::int64_t y = 0; y < img.height; ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (std::int64_t x = 0; x < img.width; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double sx = m.m00 * dx + m.m01 * dy + cx;
            const double sy = m.m10 * dx + m.m11 * dy + cy;
            for (std::int64_t c = 0; c < img.channels; ++c) {
                double v = 0.0;
                if (sampling == Sampling::Nearest) {
                    const std::int64_t ix = static_cast<std::int64_t>(std::llround(sx));
                    const std::int64_t iy = static_cast<std::int64_t>(std::llround(sy));
                    if (ix >= 0 && ix < img.width && iy >= 0 && iy < img.height) {
                        v = img.at(c, iy, ix);
                    }
                } else {
                    const double fx0 = std::floor(sx);
                    const double fy0 = std::floor(sy);
                    const std::int64_t x0 = static_cast<std::int64_t>(fx0);
                    const std::int64_t y0 = static_cast<std::int64_t>(fy0);
                    const double wx = sx - fx0;
                    const double wy = sy - fy0;
                    auto sample = [&](std::int64_t yy, std::int64_t xx) -> double {
                        if (xx < 0 || xx >= img.width || yy < 0 || yy >= img.height) return 0.0;
                        return img.at(c, yy, xx);
                    };
                    const double top = (1.0 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1);
                    const double bot = (1.0 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1);
                    v = (1.0 - wy) * top + wy * bot;
                }
                if (v < 0.0) v = 0.0;
                if (v > 1.0) v = 1.0;
                out.at(c, y, x) = static_cast<float>(v);
            }
        }
    }
    return out;
}

namespace {

double draw_parameter(RngStream& rng, const TransformSpec& spec) {
    const double mag = rng.uniform(spec.min_param, spec.max_param);
    if (spec.kind == TransformKind::Scal) {
        return mag;
    }
    const bool negative = (rng.next_u64() & 1) != 0;
    return negative ? -mag : mag;
}

}  // namespace

Dataset augment_corpus(const Dataset& originals, const std::vector<TransformSpec>& specs,
                       std::uint64_t seed) {
    if (specs.empty()) {
        throw std::invalid_argument("augment_corpus: empty transform set");
    }
    std::int64_t next_id = 0;
    for (const auto& s : originals.samples) {
        next_id = std::max(next_id, s.sample_id + 1);
    }

    Dataset out;
    out.manifest = originals.manifest;
    out.manifest.samples.clear();
    for (const auto& src : originals.samples) {
        for (std::size_t j = 0; j < specs.size(); ++j) {
            auto rng = RngStream::keyed({seed, rng_tag::kAugment,
                                         static_cast<std::uint64_t>(src.sample_id),
                                         static_cast<std::uint64_t>(j)});
            const double parameter = draw_parameter(rng, specs[j]);
            SampleRecord rec;
            rec.sample_id = next_id;
            rec.source_id = src.sample_id;
            rec.class_label = src.class_label;
            rec.tag = tag_of(specs[j].kind);
            rec.pixels = apply_affine(src.pixels, specs[j].kind, parameter);
            out.samples.push_back(std::move(rec));

            ManifestEntry e;
            e.sample_id = next_id;
            e.source_id = src.sample_id;
            e.class_label = src.class_label;
            e.tag = tag_of(specs[j].kind);
            e.file.clear();  // materialized on save
            out.manifest.samples.push_back(std::move(e));
            ++next_id;
        }
    }
    return out;
}

std::pair<TransformKind, double> draw_pair_transform(std::int64_t sample_id, std::int64_t epoch,
                                                     std::uint64_t seed,
                                                     const std::vector<TransformSpec>& specs) {
    if (specs.empty()) {
        throw std::invalid_argument("draw_pair_transform: empty transform set");
    }
    auto rng = RngStream::keyed({seed, rng_tag::kPairDraw, static_cast<std::uint64_t>(sample_id),
                                 static_cast<std::uint64_t>(epoch)});
    const std::size_t pick = static_cast<std::size_t>(rng.next_below(specs.size()));
    const double parameter = draw_parameter(rng, specs[pick]);
    return {specs[pick].kind, parameter};
}

}  // namespace deepclust
