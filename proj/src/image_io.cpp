#include "miniseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace miniseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG: " + path);

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("malformed PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_png(png, info,
                 PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA |
                     PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_PACKING,
                 nullptr);

    const std::size_t h = png_get_image_height(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unsupported PNG channel count " +
                        std::to_string(channels) + ": " + path);
    }

    ImageU8 img;
    img.h = h;
    img.w = w;
    img.channels = channels;
    img.pixels.resize(h * w * channels);
    png_bytepp rows = png_get_rows(png, info);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(rows[y], w * channels, img.pixels.data() + y * w * channels);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw ContractError("write_png: channels must be 1 or 3");
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot create PNG: " + path);

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
                 static_cast<png_uint_32>(img.h), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_bytep> rows(img.h);
    for (std::size_t y = 0; y < img.h; ++y) {
        rows[y] = const_cast<png_bytep>(img.pixels.data() +
                                        y * img.w * img.channels);
    }
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor<float> image_to_tensor(const ImageU8& img) {
    if (img.channels != 3) {
        throw DataError("image_to_tensor: want 3 channels, got " +
                        std::to_string(img.channels));
    }
    std::vector<float> data(3 * img.h * img.w);
    const std::size_t plane = img.h * img.w;
    for (std::size_t y = 0; y < img.h; ++y) {
        for (std::size_t x = 0; x < img.w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                data[c * plane + y * img.w + x] =
                    static_cast<float>(img.at(y, x, c));
            }
        }
    }
    return Tensor<float>::from_vector({3, img.h, img.w}, std::move(data));
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
    if (t.rank() != 3 || t.extent(0) != 3) {
        throw ContractError("tensor_to_image: want [3,H,W]");
    }
    const std::size_t h = t.extent(1), w = t.extent(2), plane = h * w;
    ImageU8 img;
    img.h = h;
    img.w = w;
    img.channels = 3;
    img.pixels.resize(3 * plane);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const float v =
                    std::clamp(t.data()[c * plane + y * w + x], 0.0f, 255.0f);
                img.pixels[(y * w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }
    return img;
}

LabelMap image_to_label(const ImageU8& img) {
    if (img.channels != 1) {
        throw DataError("label PNG must be single-channel, got " +
                        std::to_string(img.channels) + " channels");
    }
    LabelMap map(img.h, img.w);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const std::uint8_t id = img.pixels[i];
        if (!valid_label(id)) {
            throw DataError("label id " + std::to_string(int(id)) +
                            " out of range (0..18 or 255)");
        }
        map.ids[i] = id;
    }
    return map;
}

ImageU8 label_to_image(const LabelMap& map) {
    ImageU8 img;
    img.h = map.h;
    img.w = map.w;
    img.channels = 1;
    img.pixels = map.ids;
    return img;
}

ImageU8 colorize_label(const LabelMap& map,
                       const std::array<Rgb, kNumClasses>& palette) {
    ImageU8 img;
    img.h = map.h;
    img.w = map.w;
    img.channels = 3;
    img.pixels.assign(map.h * map.w * 3, 0);
    for (std::size_t i = 0; i < map.ids.size(); ++i) {
        const std::uint8_t id = map.ids[i];
        if (id >= kNumClasses) continue;  // ignore stays black
        img.pixels[i * 3 + 0] = palette[id].r;
        img.pixels[i * 3 + 1] = palette[id].g;
        img.pixels[i * 3 + 2] = palette[id].b;
    }
    return img;
}

void save_palette(const std::string& path,
                  const std::array<Rgb, kNumClasses>& palette) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write palette: " + path);
    os << "id,name,r,g,b\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        os << c << ',' << kClassNames[c] << ',' << int(palette[c].r) << ','
           << int(palette[c].g) << ',' << int(palette[c].b) << '\n';
    }
}

std::array<Rgb, kNumClasses> load_palette(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open palette: " + path);
    std::array<Rgb, kNumClasses> palette{};
    std::array<bool, kNumClasses> seen{};
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t id;
        int r, g, b;
        char name[64];
        if (std::sscanf(line.c_str(), "%zu,%63[^,],%d,%d,%d", &id, name, &r, &g,
                        &b) != 5 ||
            id >= kNumClasses || r < 0 || r > 255 || g < 0 || g > 255 ||
            b < 0 || b > 255) {
            throw DataError("malformed palette row: " + line);
        }
        palette[id] = {std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)};
        seen[id] = true;
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!seen[c]) {
            throw DataError("palette missing class " + std::to_string(c));
        }
    }
    return palette;
}

}  // namespace miniseg
