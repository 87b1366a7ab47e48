#include "deepclust/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "deepclust/rng.hpp"

namespace deepclust {

namespace fs = std::filesystem;
using nlohmann::json;

const char* transform_tag_name(TransformTag tag) {
    switch (tag) {
        case TransformTag::None: return "none";
        case TransformTag::Rot: return "rot";
        case TransformTag::Sher: return "sher";
        case TransformTag::Scal: return "scal";
    }
    return "?";
}

TransformTag transform_tag_from_name(const std::string& name) {
    if (name == "none") return TransformTag::None;
    if (name == "rot") return TransformTag::Rot;
    if (name == "sher") return TransformTag::Sher;
    if (name == "scal") return TransformTag::Scal;
    throw std::invalid_argument("unknown transform tag: " + name);
}

std::int64_t DatasetManifest::original_count() const {
    std::int64_t n = 0;
    for (const auto& s : samples) {
        if (s.tag == TransformTag::None) ++n;
    }
    return n;
}

std::int64_t DatasetManifest::augmented_count() const {
    return static_cast<std::int64_t>(samples.size()) - original_count();
}

void DatasetManifest::save(const fs::path& path) const {
    json j;
    j["format"] = "deepclust-manifest";
    j["version"] = 1;
    j["class_names"] = class_names;
    j["per_class_counts"] = per_class_counts;
    j["resolution"] = resolution;
    j["normalization"] = normalization;
    j["seed"] = seed;
    json arr = json::array();
    for (const auto& s : samples) {
        arr.push_back({{"id", s.sample_id},
                       {"source", s.source_id},
                       {"label", s.class_label},
                       {"tag", transform_tag_name(s.tag)},
                       {"file", s.file}});
    }
    j["samples"] = std::move(arr);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest: " + path.string());
    os << j.dump(1) << "\n";
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
    json j;
    is >> j;
    if (j.value("format", "") != "deepclust-manifest") {
        throw std::runtime_error("not a deepclust manifest: " + path.string());
    }
    DatasetManifest m;
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.per_class_counts = j.at("per_class_counts").get<std::vector<std::int64_t>>();
    m.resolution = j.at("resolution").get<std::int64_t>();
    m.normalization = j.at("normalization").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("samples")) {
        ManifestEntry e;
        e.sample_id = s.at("id").get<std::int64_t>();
        e.source_id = s.at("source").get<std::int64_t>();
        e.class_label = s.at("label").get<std::int32_t>();
        e.tag = transform_tag_from_name(s.at("tag").get<std::string>());
        e.file = s.at("file").get<std::string>();
        m.samples.push_back(std::move(e));
    }
    return m;
}

TrainView TrainView::of(const Dataset& ds) {
    TrainView v;
    v.pixels.reserve(ds.samples.size());
    v.sample_ids.reserve(ds.samples.size());
    v.source_ids.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        v.pixels.push_back(&s.pixels);
        v.sample_ids.push_back(s.sample_id);
        v.source_ids.push_back(s.source_id);
    }
    return v;
}

namespace {

Image load_normalized(const fs::path& file, std::int64_t resolution) {
    Image img = load_image(file);
    img = expand_channels(img, 3);
    img = resize_bilinear(img, resolution, resolution);
    for (float& p : img.pixels) {
        if (p < 0.0f) p = 0.0f;
        if (p > 1.0f) p = 1.0f;
    }
    return img;
}

bool is_image_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".png" || ext == ".PNG" || ext == ".dclr";
}

}  // namespace

Dataset ingest(const fs::path& root_dir, std::int64_t resolution, std::uint64_t seed) {
    if (!fs::is_directory(root_dir)) {
        throw std::runtime_error("ingest: not a directory: " + root_dir.string());
    }
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root_dir)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    if (class_dirs.empty()) {
        throw std::runtime_error("ingest: no class subdirectories in " + root_dir.string());
    }
    std::sort(class_dirs.begin(), class_dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    Dataset ds;
    ds.manifest.resolution = resolution;
    ds.manifest.seed = seed;
    std::int64_t next_id = 0;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            if (entry.is_regular_file() && is_image_file(entry.path())) {
                files.push_back(entry.path());
            }
        }
        if (files.empty()) {
            throw std::runtime_error("ingest: empty class directory: " + class_dirs[label].string());
        }
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
        ds.manifest.class_names.push_back(class_dirs[label].filename().string());
        ds.manifest.per_class_counts.push_back(static_cast<std::int64_t>(files.size()));
        for (const auto& file : files) {
            SampleRecord rec;
            rec.sample_id = next_id;
            rec.source_id = next_id;
            rec.class_label = static_cast<std::int32_t>(label);
            rec.tag = TransformTag::None;
            rec.pixels = load_normalized(file, resolution);
            ds.samples.push_back(std::move(rec));

            ManifestEntry e;
            e.sample_id = next_id;
            e.source_id = next_id;
            e.class_label = static_cast<std::int32_t>(label);
            e.tag = TransformTag::None;
            e.file = fs::absolute(file).string();
            ds.manifest.samples.push_back(std::move(e));
            ++next_id;
        }
    }
    return ds;
}

Dataset load_dataset(const fs::path& manifest_path) {
    Dataset ds;
    ds.manifest = DatasetManifest::load(manifest_path);
    const fs::path base = fs::absolute(manifest_path).parent_path();
    ds.samples.reserve(ds.manifest.samples.size());
    for (const auto& e : ds.manifest.samples) {
        SampleRecord rec;
        rec.sample_id = e.sample_id;
        rec.source_id = e.source_id;
        rec.class_label = e.class_label;
        rec.tag = e.tag;
        fs::path file(e.file);
        if (file.is_relative()) file = base / file;
        rec.pixels = load_normalized(file, ds.manifest.resolution);
        ds.samples.push_back(std::move(rec));
    }
    return ds;
}

void save_dataset(Dataset& ds, const fs::path& manifest_path) {
    const fs::path base = fs::absolute(manifest_path).parent_path();
    fs::create_directories(base);
    const std::string stem = manifest_path.stem().string();
    const fs::path data_dir = base / (stem + "_data");
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        auto& entry = ds.manifest.samples[i];
        if (!entry.file.empty()) continue;  // already backed by a file
        fs::create_directories(data_dir);
        const fs::path file = data_dir / ("sample_" + std::to_string(entry.sample_id) + ".dclr");
        save_dclr(file, ds.samples[i].pixels);
        entry.file = fs::absolute(file).string();
    }
    ds.manifest.save(manifest_path);
}

Dataset subsample(const Dataset& ds, std::int64_t per_class, std::uint64_t seed) {
    std::map<std::int32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (!ds.samples[i].is_original()) {
            throw std::runtime_error("subsample expects an original-only dataset");
        }
        by_class[ds.samples[i].class_label].push_back(i);
    }
    std::vector<std::size_t> keep;
    for (auto& [label, indices] : by_class) {
        if (static_cast<std::int64_t>(indices.size()) < per_class) {
            throw std::runtime_error(
                "subsample: class '" + ds.manifest.class_names[static_cast<std::size_t>(label)] +
                "' has " + std::to_string(indices.size()) + " images, need " +
                std::to_string(per_class));
        }
        auto rng = RngStream::keyed({ds.manifest.seed, rng_tag::kSubsample, seed,
                                     static_cast<std::uint64_t>(label)});
        rng.shuffle(indices);
        indices.resize(static_cast<std::size_t>(per_class));
        keep.insert(keep.end(), indices.begin(), indices.end());
    }
    std::sort(keep.begin(), keep.end());

    Dataset out;
    out.manifest = ds.manifest;
    out.manifest.samples.clear();
    out.manifest.per_class_counts.assign(ds.manifest.class_names.size(), per_class);
    for (std::size_t idx : keep) {
        out.samples.push_back(ds.samples[idx]);
        out.manifest.samples.push_back(ds.manifest.samples[idx]);
    }
    return out;
}

std::vector<std::int32_t> labels_of(const Dataset& ds) {
    std::vector<std::int32_t> labels;
    labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        labels.push_back(s.class_label);
    }
    return labels;
}

}  // namespace deepclust
