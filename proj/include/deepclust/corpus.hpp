#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepclust/image.hpp"

namespace deepclust {

enum class TransformTag : std::uint8_t { None, Rot, Sher, Scal };

const char* transform_tag_name(TransformTag tag);
TransformTag transform_tag_from_name(const std::string& name);

// One image of the corpus. Labels ride along for evaluation only; the
// training surface (TrainView) never exposes them.
struct SampleRecord {
    std::int64_t sample_id = 0;
    std::int64_t source_id = 0;  // == sample_id for originals
    std::int32_t class_label = 0;
    TransformTag tag = TransformTag::None;
    Image pixels;

    bool is_original() const { return tag == TransformTag::None; }
};

struct ManifestEntry {
    std::int64_t sample_id = 0;
    std::int64_t source_id = 0;
    std::int32_t class_label = 0;
    TransformTag tag = TransformTag::None;
    std::string file;  // relative to the manifest's directory
};

struct DatasetManifest {
    std::vector<std::string> class_names;       // ordinal label = index
    std::vector<std::int64_t> per_class_counts; // originals per class
    std::int64_t resolution = 0;                // square target size
    std::string normalization = "u8/255, bilinear resize, gray replicated to 3ch";
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> samples;

    std::int64_t original_count() const;
    std::int64_t augmented_count() const;

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<SampleRecord> samples;  // same order as manifest.samples
};

// What training stages are allowed to see: pixels and provenance, no labels.
struct TrainView {
    std::vector<const Image*> pixels;
    std::vector<std::int64_t> sample_ids;
    std::vector<std::int64_t> source_ids;

    std::int64_t size() const { return static_cast<std::int64_t>(pixels.size()); }
    static TrainView of(const Dataset& ds);
};

// Reads one subdirectory per class (PNG or DCLR files), resizes every image
// to resolution x resolution (bilinear), replicates grayscale to 3 channels
// and records deterministic ordering: class directories lexicographic, file
// names lexicographic within a class.
Dataset ingest(const std::filesystem::path& root_dir, std::int64_t resolution, std::uint64_t seed);

// Re-materializes a dataset from a saved manifest (decoding and resizing
// the referenced files; deterministic).
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes the manifest; samples without a backing file (augmented ones) are
// stored as DCLR tensors under <manifest stem>_data/.
void save_dataset(Dataset& ds, const std::filesystem::path& manifest_path);

// Keeps exactly per_class originals per class, chosen by seeded shuffle.
// Sample ids are preserved; order stays id-ascending. Throws (naming the
// class) when a class has too few images.
Dataset subsample(const Dataset& ds, std::int64_t per_class, std::uint64_t seed);

// Evaluation labels in manifest order.
std::vector<std::int32_t> labels_of(const Dataset& ds);

}  // namespace deepclust
