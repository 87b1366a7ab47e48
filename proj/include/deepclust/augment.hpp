#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deepclust/corpus.hpp"
#include "deepclust/image.hpp"

namespace deepclust {

enum class TransformKind : std::uint8_t { Rot, Sher, Scal };

const char* transform_kind_name(TransformKind kind);
TransformKind transform_kind_from_name(const std::string& name);
TransformTag tag_of(TransformKind kind);

// Parameter ranges: rotation angle 0-90 degrees, shear angle 0-50 degrees,
// scale factor 0.5-1.0. Rotation and shear magnitudes get a uniform +/- sign
// when drawn; apply_affine accepts the signed value.
struct TransformSpec {
    TransformKind kind;
    double min_param;
    double max_param;

    static TransformSpec defaults(TransformKind kind);
    bool accepts(double parameter) const;
};

std::vector<TransformSpec> parse_transform_set(const std::string& csv);  // "rot,sher,scal"

enum class Sampling : std::uint8_t { Bilinear, Nearest };

// Affine warp about the image center: rotation by `parameter` degrees, shear
// of `parameter` degrees along the horizontal axis, or uniform scaling by
// factor `parameter`. Inverse mapping; out-of-bounds sources fill with 0;
// output clamped to [0,1]. Nearest sampling exists for oracle tests.
Image apply_affine(const Image& img, TransformKind kind, double parameter,
                   Sampling sampling = Sampling::Bilinear);

// One augmented copy per (original, spec) pair, parameters drawn from
// per-(seed, sample, spec) streams so results are independent of execution
// order. Output ids continue after the originals' ids.
Dataset augment_corpus(const Dataset& originals, const std::vector<TransformSpec>& specs,
                       std::uint64_t seed);

// Deterministic transform draw for the consistency-loss counterpart of one
// sample in one epoch: uniform over specs, then uniform over the spec's
// range (signed for rot/sher).
std::pair<TransformKind, double> draw_pair_transform(std::int64_t sample_id, std::int64_t epoch,
                                                     std::uint64_t seed,
                                                     const std::vector<TransformSpec>& specs);

}  // namespace deepclust
