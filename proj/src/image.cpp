#include "deepclust/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace deepclust {

Image make_image(std::int64_t channels, std::int64_t height, std::int64_t width, float fill) {
    Image img;
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<std::size_t>(channels * height * width), fill);
    return img;
}

Image load_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) {
        throw std::runtime_error("cannot open image: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed for: " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("failed to decode PNG: " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    // Normalize to 8-bit gray or RGB.
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_size_t rowbytes = png_get_rowbytes(png, info);
    const int out_channels = static_cast<int>(png_get_channels(png, info));
    std::vector<png_byte> raw(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        rows[y] = raw.data() + y * rowbytes;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    if (out_channels != 1 && out_channels != 3) {
        throw std::runtime_error("unsupported PNG channel count " + std::to_string(out_channels) +
                                 " in " + path.string());
    }
    Image img = make_image(out_channels, height, width);
    for (std::int64_t y = 0; y < img.height; ++y) {
        const png_byte* row = raw.data() + static_cast<std::size_t>(y) * rowbytes;
        for (std::int64_t x = 0; x < img.width; ++x) {
            for (std::int64_t c = 0; c < img.channels; ++c) {
                img.at(c, y, x) = static_cast<float>(row[x * out_channels + c]) / 255.0f;
            }
        }
    }
    return img;
}

Image load_dclr(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DCLR", 4) != 0) {
        throw std::runtime_error("not a DCLR raw tensor: " + path.string());
    }
    std::uint32_t dims[3];
    is.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!is) throw std::runtime_error("truncated DCLR header: " + path.string());
    Image img = make_image(dims[0], dims[1], dims[2]);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated DCLR payload: " + path.string());
    return img;
}

void save_dclr(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write image: " + path.string());
    os.write("DCLR", 4);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.channels),
                                   static_cast<std::uint32_t>(img.height),
                                   static_cast<std::uint32_t>(img.width)};
    os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Image load_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".png" || ext == ".PNG") return load_png(path);
    if (ext == ".dclr") return load_dclr(path);
    throw std::runtime_error("unsupported image format: " + path.string());
}

Image resize_bilinear(const Image& img, std::int64_t out_h, std::int64_t out_w) {
    if (img.height == out_h && img.width == out_w) {
        return img;
    }
    Image out = make_image(img.channels, out_h, out_w);
    const double scale_y = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double scale_x = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (std::int64_t y = 0; y < out_h; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
        if (sy < 0.0) sy = 0.0;
        std::int64_t y0 = static_cast<std::int64_t>(sy);
        if (y0 > img.height - 1) y0 = img.height - 1;
        const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, img.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < out_w; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
            if (sx < 0.0) sx = 0.0;
            std::int64_t x0 = static_cast<std::int64_t>(sx);
            if (x0 > img.width - 1) x0 = img.width - 1;
            const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, img.width - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::int64_t c = 0; c < img.channels; ++c) {
                const double top = (1.0 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1);
                const double bot = (1.0 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1);
                out.at(c, y, x) = static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

Image expand_channels(const Image& img, std::int64_t channels) {
    if (img.channels == channels) return img;
    if (img.channels != 1) {
        throw std::runtime_error("cannot expand " + std::to_string(img.channels) + " channels to " +
                                 std::to_string(channels));
    }
    Image out = make_image(channels, img.height, img.width);
    for (std::int64_t c = 0; c < channels; ++c) {
        std::copy(img.pixels.begin(), img.pixels.end(),
                  out.pixels.begin() + c * img.height * img.width);
    }
    return out;
}

}  // namespace deepclust
