#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miniseg/labels.hpp"
#include "miniseg/tensor.hpp"

// PNG input/output. Images are 8-bit RGB; labels are single-channel 8-bit
// with pixel value = train id (255 = ignore).

namespace miniseg {

struct ImageU8 {
    std::size_t h = 0, w = 0, channels = 0;
    std::vector<std::uint8_t> pixels;  // interleaved, row-major

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * w + x) * channels + c];
    }
};

// Decodes a PNG; palette images expand to RGB, 16-bit depth narrows to 8,
// alpha is stripped. Result has 1 or 3 channels.
ImageU8 read_png(const std::string& path);

void write_png(const std::string& path, const ImageU8& img);

// [3,H,W] float tensor with raw 0..255 values.
Tensor<float> image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor<float>& t);  // clamps to [0,255]

LabelMap image_to_label(const ImageU8& img);  // wants 1 channel, valid ids
ImageU8 label_to_image(const LabelMap& map);  // grayscale ids

// Palette rendering of a label map; ignore pixels come out black.
ImageU8 colorize_label(const LabelMap& map,
                       const std::array<Rgb, kNumClasses>& palette = kPalette);

// Palette file: CSV rows "id,name,r,g,b", one per class, in id order.
void save_palette(const std::string& path,
                  const std::array<Rgb, kNumClasses>& palette = kPalette);
std::array<Rgb, kNumClasses> load_palette(const std::string& path);

}  // namespace miniseg
