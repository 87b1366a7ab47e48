#include "deepclust/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace deepclust {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    std::uint8_t buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    std::uint8_t buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("weights file: truncated read");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace

void WeightsFile::add_f64(const std::string& name, const Shape& dims,
                          std::span<const double> values) {
    if (numel(dims) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("weights entry '" + name + "': dims/value count mismatch");
    }
    Entry e;
    e.name = name;
    e.dtype = Dtype::F64;
    e.dims = dims;
    e.payload.resize(values.size() * sizeof(double));
    std::memcpy(e.payload.data(), values.data(), e.payload.size());
    entries_.push_back(std::move(e));
}

void WeightsFile::add_bytes(const std::string& name, const std::string& text) {
    Entry e;
    e.name = name;
    e.dtype = Dtype::Bytes;
    e.dims = {static_cast<std::int64_t>(text.size())};
    e.payload.assign(text.begin(), text.end());
    entries_.push_back(std::move(e));
}

const WeightsFile::Entry& WeightsFile::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e;
    }
    throw std::out_of_range("weights file: no entry named '" + name + "'");
}

bool WeightsFile::has(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return true;
    }
    return false;
}

std::vector<double> WeightsFile::f64(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != Dtype::F64) throw std::runtime_error("weights entry '" + name + "' is not f64");
    std::vector<double> v(e.payload.size() / sizeof(double));
    std::memcpy(v.data(), e.payload.data(), e.payload.size());
    return v;
}

Shape WeightsFile::dims(const std::string& name) const { return find(name).dims; }

std::string WeightsFile::bytes(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != Dtype::Bytes) throw std::runtime_error("weights entry '" + name + "' is not bytes");
    return std::string(e.payload.begin(), e.payload.end());
}

void WeightsFile::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(e.dtype));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(e.dims.size()));
        for (std::int64_t d : e.dims) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(e.payload.size()));
        os.write(reinterpret_cast<const char*>(e.payload.data()),
                 static_cast<std::streamsize>(e.payload.size()));
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

WeightsFile WeightsFile::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open weights file: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not a DCLW weights file: " + path.string());
    }
    const auto version = get<std::uint32_t>(is);
    if (version != kVersion) {
        throw std::runtime_error("unsupported DCLW version " + std::to_string(version));
    }
    const auto count = get<std::uint32_t>(is);
    WeightsFile wf;
    wf.entries_.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto name_len = get<std::uint32_t>(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        e.dtype = static_cast<Dtype>(get<std::uint8_t>(is));
        const auto ndim = get<std::uint8_t>(is);
        e.dims.resize(ndim);
        for (auto& d : e.dims) d = static_cast<std::int64_t>(get<std::uint64_t>(is));
        const auto payload_bytes = get<std::uint64_t>(is);
        e.payload.resize(payload_bytes);
        is.read(reinterpret_cast<char*>(e.payload.data()),
                static_cast<std::streamsize>(payload_bytes));
        if (!is) throw std::runtime_error("weights file: truncated entry in " + path.string());
        wf.entries_.push_back(std::move(e));
    }
    return wf;
}

}  // namespace deepclust
