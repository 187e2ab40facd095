#include "ovseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace ovseg {

namespace {

struct File {
    std::FILE* f;
    ~File() {
        if (f) std::fclose(f);
    }
};

struct Raster {
    uint32_t width = 0, height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;
};

// keep_indices: palette images stay as indices and gray stays single-channel.
Raster read_raster(const std::string& path, bool keep_indices) {
    File file{std::fopen(path.c_str(), "rb")};
    if (!file.f) throw ImageIoError("cannot open " + path);
    uint8_t sig[8];
    if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw ImageIoError(path + " is not a PNG");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageIoError("libpng initialisation failed");
    }
    Raster r;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("failed to decode " + path);
    }
    png_init_io(png, file.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (keep_indices) {
        if (color == PNG_COLOR_TYPE_PALETTE || color == PNG_COLOR_TYPE_GRAY) {
            if (depth < 8) png_set_packing(png);
        } else {
            png_destroy_read_struct(&png, &info, nullptr);
            throw ImageIoError(path + ": label maps must be grayscale or palette PNGs");
        }
    } else {
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    r.width = png_get_image_width(png, info);
    r.height = png_get_image_height(png, info);
    r.channels = png_get_channels(png, info);
    const auto stride = png_get_rowbytes(png, info);
    r.pixels.resize(stride * r.height);
    rows.resize(r.height);
    for (uint32_t y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return r;
}

void write_raster(const std::string& path, uint32_t width, uint32_t height, int channels,
                  const std::vector<uint8_t>& pixels) {
    File file{std::fopen(path.c_str(), "wb")};
    if (!file.f) throw ImageIoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageIoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("failed to encode " + path);
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (uint32_t y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageTensor read_png(const std::string& path) {
    const auto r = read_raster(path, false);
    const size_t hw = static_cast<size_t>(r.width) * r.height;
    std::vector<double> v(3 * hw);
    for (size_t i = 0; i < hw; ++i)
        for (size_t c = 0; c < 3; ++c) v[c * hw + i] = r.pixels[i * 3 + c] / 255.0;
    return make_image(Tensor::from({3, r.height, r.width}, std::move(v)));
}

void write_png(const std::string& path, const ImageTensor& image) {
    const auto h = image.height(), w = image.width();
    const auto v = image.data.data();
    std::vector<uint8_t> px(static_cast<size_t>(3 * h * w));
    for (int64_t i = 0; i < h * w; ++i)
        for (int64_t c = 0; c < 3; ++c)
            px[static_cast<size_t>(i * 3 + c)] =
                static_cast<uint8_t>(std::lround(std::clamp(v[static_cast<size_t>(c * h * w + i)], 0.0, 1.0) * 255.0));
    write_raster(path, static_cast<uint32_t>(w), static_cast<uint32_t>(h), 3, px);
}

SegMap read_label_png(const std::string& path) {
    const auto r = read_raster(path, true);
    if (r.channels != 1) throw ImageIoError(path + ": expected a single-channel label map");
    SegMap m;
    m.height = r.height;
    m.width = r.width;
    m.labels.assign(r.pixels.begin(), r.pixels.begin() + static_cast<std::ptrdiff_t>(m.height * m.width));
    return m;
}

void write_label_png(const std::string& path, const SegMap& map) {
    std::vector<uint8_t> px(map.labels.size());
    for (size_t i = 0; i < px.size(); ++i) {
        if (map.labels[i] < 0 || map.labels[i] > 255)
            throw ImageIoError("label " + std::to_string(map.labels[i]) + " does not fit an 8-bit PNG");
        px[i] = static_cast<uint8_t>(map.labels[i]);
    }
    write_raster(path, static_cast<uint32_t>(map.width), static_cast<uint32_t>(map.height), 1, px);
}

std::array<uint8_t, 3> class_color(int32_t label) {
    if (label == 255 || label < 0) return {0, 0, 0};
    // Bit-interleaved palette, as used by common segmentation benchmarks.
    std::array<uint8_t, 3> rgb{0, 0, 0};
    int32_t c = label + 1;
    for (int shift = 7; c > 0 && shift >= 0; --shift, c >>= 3) {
        rgb[0] |= static_cast<uint8_t>(((c >> 0) & 1) << shift);
        rgb[1] |= static_cast<uint8_t>(((c >> 1) & 1) << shift);
        rgb[2] |= static_cast<uint8_t>(((c >> 2) & 1) << shift);
    }
    return rgb;
}

void write_color_png(const std::string& path, const SegMap& map) {
    std::vector<uint8_t> px(map.labels.size() * 3);
    for (size_t i = 0; i < map.labels.size(); ++i) {
        const auto rgb = class_color(map.labels[i]);
        std::copy(rgb.begin(), rgb.end(), px.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    write_raster(path, static_cast<uint32_t>(map.width), static_cast<uint32_t>(map.height), 3, px);
}

}  // namespace ovseg
