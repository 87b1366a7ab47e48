#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepclust/tensor.hpp"

namespace deepclust {

// Binary weights container, magic "DCLW". Layout (all integers little-endian):
//   "DCLW" | u32 version | u32 entry_count | entries...
// entry:
//   u32 name_len | name bytes | u8 dtype | u8 ndim | u64 dims[ndim]
//   | u64 payload_bytes | payload
// dtype: 0 = f64, 1 = f32, 2 = raw bytes (ndim = 1, dims[0] = byte count).
// Save/load round-trips are bit-exact.
class WeightsFile {
public:
    enum class Dtype : std::uint8_t { F64 = 0, F32 = 1, Bytes = 2 };

    struct Entry {
        std::string name;
        Dtype dtype;
        Shape dims;
        std::vector<std::uint8_t> payload;
    };

    void add_f64(const std::string& name, const Shape& dims, std::span<const double> values);
    void add_bytes(const std::string& name, const std::string& text);

    bool has(const std::string& name) const;
    std::vector<double> f64(const std::string& name) const;
    Shape dims(const std::string& name) const;
    std::string bytes(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }

    void save(const std::filesystem::path& path) const;
    static WeightsFile load(const std::filesystem::path& path);

private:
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
};

}  // namespace deepclust
