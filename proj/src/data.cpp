#include "miniseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "miniseg/image_io.hpp"

namespace fs = std::filesystem;

namespace miniseg {

namespace {

LabelMap resize_label_nearest(const LabelMap& in, std::size_t oh,
                              std::size_t ow) {
    if (oh == in.h && ow == in.w) return in;
    LabelMap out(oh, ow);
    for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t sy = std::min(
            in.h - 1, static_cast<std::size_t>((y + 0.5) * in.h / oh));
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t sx = std::min(
                in.w - 1, static_cast<std::size_t>((x + 0.5) * in.w / ow));
            out.at(y, x) = in.at(sy, sx);
        }
    }
    return out;
}

// bottom/right padding; image fill 0, label fill ignore
void pad_to(Tensor<float>& image, LabelMap& label, std::size_t ph,
            std::size_t pw) {
    const std::size_t h = image.extent(1), w = image.extent(2);
    if (ph == h && pw == w) return;
    std::vector<float> data(3 * ph * pw, 0.0f);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            std::copy_n(image.data() + (c * h + y) * w, w,
                        data.data() + (c * ph + y) * pw);
        }
    }
    image = Tensor<float>::from_vector({3, ph, pw}, std::move(data));
    LabelMap padded(ph, pw, kIgnoreIndex);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(label.ids.data() + y * w, w, padded.ids.data() + y * pw);
    }
    label = std::move(padded);
}

void crop(Tensor<float>& image, LabelMap& label, std::size_t y0, std::size_t x0,
          std::size_t ch, std::size_t cw) {
    const std::size_t h = image.extent(1), w = image.extent(2);
    std::vector<float> data(3 * ch * cw);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < ch; ++y) {
            std::copy_n(image.data() + (c * h + y0 + y) * w + x0, cw,
                        data.data() + (c * ch + y) * cw);
        }
    }
    image = Tensor<float>::from_vector({3, ch, cw}, std::move(data));
    LabelMap cl(ch, cw);
    for (std::size_t y = 0; y < ch; ++y) {
        std::copy_n(label.ids.data() + (y0 + y) * w + x0, cw,
                    cl.ids.data() + y * cw);
    }
    label = std::move(cl);
}

void flip_label(LabelMap& label) {
    for (std::size_t y = 0; y < label.h; ++y) {
        std::reverse(label.ids.begin() + y * label.w,
                     label.ids.begin() + (y + 1) * label.w);
    }
}

// --- photometric ops on raw 0..255 planes ---

void clamp_image(Tensor<float>& img) {
    for (auto& v : img.values()) v = std::clamp(v, 0.0f, 255.0f);
}

void adjust_brightness(Tensor<float>& img, float delta) {
    for (auto& v : img.values()) v += delta;
    clamp_image(img);
}

void adjust_contrast(Tensor<float>& img, float alpha) {
    for (auto& v : img.values()) v *= alpha;
    clamp_image(img);
}

void adjust_saturation(Tensor<float>& img, float alpha) {
    const std::size_t plane = img.extent(1) * img.extent(2);
    float* r = img.data();
    float* g = img.data() + plane;
    float* b = img.data() + 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
        const float gray = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
        r[i] = gray + (r[i] - gray) * alpha;
        g[i] = gray + (g[i] - gray) * alpha;
        b[i] = gray + (b[i] - gray) * alpha;
    }
    clamp_image(img);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b});
    const float mn = std::min({r, g, b});
    v = mx;
    const float d = mx - mn;
    s = mx == 0.0f ? 0.0f : d / mx;
    if (d == 0.0f) {
        h = 0.0f;
    } else if (mx == r) {
        h = 60.0f * std::fmod((g - b) / d, 6.0f);
    } else if (mx == g) {
        h = 60.0f * ((b - r) / d + 2.0f);
    } else {
        h = 60.0f * ((r - g) / d + 4.0f);
    }
    if (h < 0.0f) h += 360.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float c = v * s;
    const float hp = h / 60.0f;
    const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    float r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1) { r1 = c; g1 = x; }
    else if (hp < 2) { r1 = x; g1 = c; }
    else if (hp < 3) { g1 = c; b1 = x; }
    else if (hp < 4) { g1 = x; b1 = c; }
    else if (hp < 5) { r1 = x; b1 = c; }
    else { r1 = c; b1 = x; }
    const float m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

void adjust_hue(Tensor<float>& img, float delta_deg) {
    const std::size_t plane = img.extent(1) * img.extent(2);
    float* r = img.data();
    float* g = img.data() + plane;
    float* b = img.data() + 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
        float h, s, v;
        rgb_to_hsv(r[i] / 255.0f, g[i] / 255.0f, b[i] / 255.0f, h, s, v);
        h = std::fmod(h + delta_deg + 360.0f, 360.0f);
        float rr, gg, bb;
        hsv_to_rgb(h, s, v, rr, gg, bb);
        r[i] = rr * 255.0f;
        g[i] = gg * 255.0f;
        b[i] = bb * 255.0f;
    }
    clamp_image(img);
}

void photometric_distortion(Tensor<float>& img, const PhotometricSpec& spec,
                            Rng& rng) {
    // random application order, each transform with its own coin
    std::array<int, 4> order{0, 1, 2, 3};
    for (std::size_t i = 3; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
    }
    for (int op : order) {
        if (!rng.bernoulli(spec.prob)) continue;
        switch (op) {
            case 0:
                adjust_brightness(img, static_cast<float>(rng.uniform(
                                           -spec.brightness_delta,
                                           spec.brightness_delta)));
                break;
            case 1:
                adjust_contrast(img, static_cast<float>(rng.uniform(
                                         spec.contrast_lo, spec.contrast_hi)));
                break;
            case 2:
                adjust_saturation(img,
                                  static_cast<float>(rng.uniform(
                                      spec.saturation_lo, spec.saturation_hi)));
                break;
            case 3:
                adjust_hue(img, static_cast<float>(rng.uniform(
                                    -spec.hue_delta_deg, spec.hue_delta_deg)));
                break;
        }
    }
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

Tensor<float> normalize_image(const Tensor<float>& image,
                              const std::array<double, 3>& mean,
                              const std::array<double, 3>& stddev) {
    const std::size_t plane = image.extent(1) * image.extent(2);
    std::vector<float> data(image.values().begin(), image.values().end());
    for (std::size_t c = 0; c < 3; ++c) {
        const float m = static_cast<float>(mean[c]);
        const float inv = static_cast<float>(1.0 / stddev[c]);
        for (std::size_t i = 0; i < plane; ++i) {
            data[c * plane + i] = (data[c * plane + i] - m) * inv;
        }
    }
    return Tensor<float>::from_vector(image.shape(), std::move(data));
}

Sample augment(const Sample& s, const AugSpec& spec, Rng& rng) {
    spec.validate();
    autograd::NoGradGuard no_grad;

    // Resize
    double sy = rng.uniform(spec.scale_lo, spec.scale_hi);
    double sx = spec.keep_aspect ? sy : rng.uniform(spec.scale_lo, spec.scale_hi);
    const std::size_t h = s.image.extent(1), w = s.image.extent(2);
    const std::size_t nh = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(h * sy)));
    const std::size_t nw = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(w * sx)));
    Sample out;
    out.id = s.id;
    out.image = bilinear_resize(s.image, nh, nw, false);
    out.label = resize_label_nearest(s.label, nh, nw);

    // RandomCrop (pad first when the resized image is smaller than the crop)
    pad_to(out.image, out.label, std::max(nh, spec.crop_h),
           std::max(nw, spec.crop_w));
    const std::size_t ph = out.image.extent(1), pw = out.image.extent(2);
    const std::size_t y0 = rng.uniform_int(ph - spec.crop_h + 1);
    const std::size_t x0 = rng.uniform_int(pw - spec.crop_w + 1);
    crop(out.image, out.label, y0, x0, spec.crop_h, spec.crop_w);

    // RandomFlip (horizontal)
    if (rng.bernoulli(spec.flip_prob)) {
        out.image = flip_horizontal(out.image);
        flip_label(out.label);
    }

    // PhotoMetricDistortion (image only)
    if (spec.with_photometric) {
        photometric_distortion(out.image, spec.photometric, rng);
    }

    // Normalize (image only)
    out.image = normalize_image(out.image, spec.mean, spec.stddev);

    // Pad to the encoder's divisibility requirement
    pad_to(out.image, out.label,
           round_up(out.image.extent(1), spec.pad_multiple),
           round_up(out.image.extent(2), spec.pad_multiple));
    return out;
}

std::vector<Sample> load_dataset(const std::string& root_dir,
                                 const std::string& split) {
    const fs::path img_dir = fs::path(root_dir) / "images" / split;
    const fs::path ann_dir = fs::path(root_dir) / "annotations" / split;
    if (!fs::is_directory(img_dir)) {
        throw DataError("load_dataset: missing directory " + img_dir.string());
    }
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(img_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            stems.push_back(e.path().stem().string());
        }
    }
    std::sort(stems.begin(), stems.end());

    std::vector<Sample> samples;
    std::vector<std::string> errors;
    for (const auto& stem : stems) {
        const fs::path ipath = img_dir / (stem + ".png");
        const fs::path apath = ann_dir / (stem + ".png");
        try {
            if (!fs::is_regular_file(apath)) {
                throw DataError("missing annotation " + apath.string());
            }
            ImageU8 img = read_png(ipath.string());
            if (img.channels != 3) {
                throw DataError("image must be RGB: " + ipath.string());
            }
            ImageU8 ann = read_png(apath.string());
            if (ann.h != img.h || ann.w != img.w) {
                throw DataError("image/label extent mismatch for " + stem);
            }
            Sample s;
            s.id = stem;
            s.image = image_to_tensor(img);
            s.label = image_to_label(ann);
            samples.push_back(std::move(s));
        } catch (const DataError& e) {
            errors.push_back(stem + ": " + e.what());
        }
    }
    if (!errors.empty()) {
        std::ostringstream os;
        os << "load_dataset: " << errors.size() << " bad sample(s):\n";
        for (const auto& e : errors) os << "  " << e << '\n';
        throw DataError(os.str());
    }
    return samples;
}

ClassHistogram class_pixel_distribution(const std::vector<Sample>& samples) {
    ClassHistogram hist;
    for (const Sample& s : samples) {
        for (std::uint8_t id : s.label.ids) {
            if (id == kIgnoreIndex) continue;
            ++hist.counts[id];
            ++hist.total;
        }
    }
    return hist;
}

std::string histogram_csv(const ClassHistogram& hist) {
    std::ostringstream os;
    os << "class_id,class_name,pixels,fraction\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double frac =
            hist.total ? static_cast<double>(hist.counts[c]) / hist.total : 0.0;
        os << c << ',' << kClassNames[c] << ',' << hist.counts[c] << ',' << frac
           << '\n';
    }
    return os.str();
}

void render_histogram_png(const ClassHistogram& hist, const std::string& path) {
    const std::size_t bar_w = 24, gap = 8, chart_h = 220, margin = 12;
    const std::size_t w = margin * 2 + kNumClasses * (bar_w + gap) - gap;
    const std::size_t h = chart_h + margin * 2;
    ImageU8 img;
    img.h = h;
    img.w = w;
    img.channels = 3;
    img.pixels.assign(h * w * 3, 255);
    std::uint64_t mx = 1;
    for (auto c : hist.counts) mx = std::max(mx, c);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::size_t bh = static_cast<std::size_t>(
            static_cast<double>(hist.counts[c]) / mx * chart_h);
        const std::size_t x0 = margin + c * (bar_w + gap);
        for (std::size_t y = 0; y < bh; ++y) {
            for (std::size_t x = 0; x < bar_w; ++x) {
                const std::size_t py = h - margin - 1 - y;
                std::uint8_t* px = &img.pixels[(py * w + x0 + x) * 3];
                px[0] = kPalette[c].r;
                px[1] = kPalette[c].g;
                px[2] = kPalette[c].b;
            }
        }
    }
    write_png(path, img);
}

}  // namespace miniseg
