#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

// Cityscapes trainId labeling policy: 19 evaluated classes, 255 = ignore.

namespace miniseg {

inline constexpr std::size_t kNumClasses = 19;
inline constexpr std::uint8_t kIgnoreIndex = 255;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "road",        "sidewalk",    "building", "wall",   "fence",
    "pole",        "traffic_light", "traffic_sign", "vegetation", "terrain",
    "sky",         "person",      "rider",    "car",    "truck",
    "bus",         "train",       "motorcycle", "bicycle"};

struct Rgb {
    std::uint8_t r, g, b;
};

// Standard Cityscapes color palette in trainId order.
inline constexpr std::array<Rgb, kNumClasses> kPalette = {{
    {128, 64, 128},  {244, 35, 232},  {70, 70, 70},   {102, 102, 156},
    {190, 153, 153}, {153, 153, 153}, {250, 170, 30}, {220, 220, 0},
    {107, 142, 35},  {152, 251, 152}, {70, 130, 180}, {220, 20, 60},
    {255, 0, 0},     {0, 0, 142},     {0, 0, 70},     {0, 60, 100},
    {0, 80, 100},    {0, 0, 230},     {119, 11, 32},
}};

// Integer label image; values must be valid train ids or the ignore value.
struct LabelMap {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> ids;

    LabelMap() = default;
    LabelMap(std::size_t h_, std::size_t w_, std::uint8_t fill = 0)
        : h(h_), w(w_), ids(h_ * w_, fill) {}

    std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * w + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * w + x]; }
    std::size_t size() const { return ids.size(); }
};

inline bool valid_label(std::uint8_t id) {
    return id < kNumClasses || id == kIgnoreIndex;
}

}  // namespace miniseg
