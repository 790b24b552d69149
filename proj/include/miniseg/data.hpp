#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "miniseg/labels.hpp"
#include "miniseg/rng.hpp"
#include "miniseg/tensor.hpp"

// Dataset ingestion (Cityscapes labeling policy), the augmentation pipeline
// Resize -> RandomCrop -> RandomFlip -> PhotoMetricDistortion -> Normalize
// -> Pad, and the class-distribution analyzer.

namespace miniseg {

struct Sample {
    Tensor<float> image;  // [3,H,W]
    LabelMap label;
    std::string id;
};

struct PhotometricSpec {
    double brightness_delta = 32.0;  // raw 0..255 units
    double contrast_lo = 0.5, contrast_hi = 1.5;
    double saturation_lo = 0.5, saturation_hi = 1.5;
    double hue_delta_deg = 18.0;
    double prob = 0.5;  // per-transform application probability
};

struct AugSpec {
    std::size_t crop_h = 512, crop_w = 512;
    double flip_prob = 0.5;
    double scale_lo = 0.5, scale_hi = 2.0;
    bool keep_aspect = true;
    bool with_photometric = true;
    PhotometricSpec photometric;
    std::array<double, 3> mean{123.675, 116.28, 103.53};
    std::array<double, 3> stddev{58.395, 57.12, 57.375};
    std::size_t pad_multiple = 32;

    void validate() const {
        if (crop_h == 0 || crop_w == 0) {
            throw ConfigError("augment: crop extents must be positive");
        }
        if (!(scale_lo > 0.0) || scale_hi < scale_lo) {
            throw ConfigError("augment: scale range must be positive and ordered");
        }
        if (flip_prob < 0.0 || flip_prob > 1.0) {
            throw ConfigError("augment: flip_prob must be in [0,1]");
        }
        if (pad_multiple == 0) {
            throw ConfigError("augment: pad_multiple must be positive");
        }
        for (double s : stddev) {
            if (!(s > 0.0)) throw ConfigError("augment: stddev must be positive");
        }
    }
};

// Deterministic given the Rng. Geometric transforms hit image and label
// identically (nearest-neighbor for labels); photometric distortion and
// normalization touch the image only; padding fills image 0 / label 255.
Sample augment(const Sample& s, const AugSpec& spec, Rng& rng);

// Normalize + pad only (the inference-time subset of the pipeline).
Tensor<float> normalize_image(const Tensor<float>& image,
                              const std::array<double, 3>& mean,
                              const std::array<double, 3>& stddev);

// Loads root/{images,annotations}/{split}/<stem>.png pairs in lexicographic
// stem order. Any missing pair, malformed file, extent mismatch or invalid
// label id is collected and reported in one DataError.
std::vector<Sample> load_dataset(const std::string& root_dir,
                                 const std::string& split);

struct ClassHistogram {
    std::array<std::uint64_t, kNumClasses> counts{};
    std::uint64_t total = 0;  // valid (non-ignore) pixels
};

ClassHistogram class_pixel_distribution(const std::vector<Sample>& samples);

std::string histogram_csv(const ClassHistogram& hist);

// Simple bar chart of the class distribution, for the analyze command.
void render_histogram_png(const ClassHistogram& hist, const std::string& path);

}  // namespace miniseg
