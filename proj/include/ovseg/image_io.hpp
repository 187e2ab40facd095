#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "ovseg/types.hpp"

namespace ovseg {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Any PNG, converted to 8-bit RGB and scaled to [0, 1].
ImageTensor read_png(const std::string& path);
void write_png(const std::string& path, const ImageTensor& image);

// 8-bit single-channel class-index maps. Palette PNGs yield their indices.
SegMap read_label_png(const std::string& path);
void write_label_png(const std::string& path, const SegMap& map);

// Fixed color per class index (index 255 renders black).
std::array<uint8_t, 3> class_color(int32_t label);
void write_color_png(const std::string& path, const SegMap& map);

}  // namespace ovseg
