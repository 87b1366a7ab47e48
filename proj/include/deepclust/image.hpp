#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace deepclust {

// Channel-major float image with values in [0,1].
struct Image {
    std::int64_t channels = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<float> pixels;  // CHW, row-major planes

    float at(std::int64_t c, std::int64_t y, std::int64_t x) const {
        return pixels[static_cast<std::size_t>((c * height + y) * width + x)];
    }
    float& at(std::int64_t c, std::int64_t y, std::int64_t x) {
        return pixels[static_cast<std::size_t>((c * height + y) * width + x)];
    }
    std::int64_t size() const { return channels * height * width; }
};

Image make_image(std::int64_t channels, std::int64_t height, std::int64_t width, float fill = 0.0f);

// PNG decode via libpng; 8/16-bit gray or RGB(A), scaled to [0,1]; alpha is
// dropped. Errors name the offending path.
Image load_png(const std::filesystem::path& path);

// Raw tensor fallback, magic "DCLR": u32 channels, u32 height, u32 width,
// then f32 little-endian CHW payload. Bit-exact round trip.
Image load_dclr(const std::filesystem::path& path);
void save_dclr(const std::filesystem::path& path, const Image& img);

// Loads by extension: ".png" or ".dclr".
Image load_image(const std::filesystem::path& path);

// Bilinear resample with half-pixel centers; exact identity when the size
// is unchanged.
Image resize_bilinear(const Image& img, std::int64_t out_h, std::int64_t out_w);

// Replicates a single-channel image to the requested channel count;
// passes multi-channel images through untouched (after count check).
Image expand_channels(const Image& img, std::int64_t channels);

}  // namespace deepclust
