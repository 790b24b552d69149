#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "miniseg/labels.hpp"
#include "miniseg/tensor.hpp"

// Per-pixel class-balanced cross-entropy, OHEM pixel selection, and the
// main + 0.4 * auxiliary composition.

namespace miniseg {

// ---------------------------------------------------------------------------
// Class-balanced weights
// ---------------------------------------------------------------------------

struct ClassWeights {
    std::array<double, kNumClasses> w{};  // mean-normalized to 1
    double beta = 0.0;
};

enum class WeightMode { effective_number, inverse_frequency };

// Effective-number weighting: raw_c = (1-beta)/(1-beta^n_c). Classes with no
// pixels inherit the largest raw weight so they are not silently favoured.
// inverse_frequency instead uses raw_c = total / (K * n_c). Both are then
// normalized to mean 1, which pins the overall loss scale.
inline ClassWeights class_balanced_weights(
    const std::array<std::uint64_t, kNumClasses>& pixel_counts, double beta,
    WeightMode mode = WeightMode::effective_number) {
    if (beta < 0.0 || beta >= 1.0) {
        throw ConfigError("class_balanced_weights: beta must be in [0,1)");
    }
    const std::uint64_t total =
        std::accumulate(pixel_counts.begin(), pixel_counts.end(),
                        std::uint64_t{0});
    if (total == 0) {
        throw DataError("class_balanced_weights: all class counts are zero");
    }
    ClassWeights cw;
    cw.beta = beta;
    double max_raw = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::uint64_t n = pixel_counts[c];
        if (n == 0) continue;
        double raw;
        if (mode == WeightMode::effective_number) {
            raw = beta == 0.0
                      ? 1.0
                      : (1.0 - beta) /
                            (1.0 - std::pow(beta, static_cast<double>(n)));
        } else {
            raw = static_cast<double>(total) /
                  (static_cast<double>(kNumClasses) * static_cast<double>(n));
        }
        cw.w[c] = raw;
        max_raw = std::max(max_raw, raw);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (pixel_counts[c] == 0) cw.w[c] = max_raw;
    }
    const double mean =
        std::accumulate(cw.w.begin(), cw.w.end(), 0.0) / kNumClasses;
    for (auto& v : cw.w) v /= mean;
    return cw;
}

// ---------------------------------------------------------------------------
// Pixel cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
struct PixelCeResult {
    Tensor<T> loss;                 // [H,W]; 0 at ignore pixels
    std::vector<T> true_class_prob; // softmax probability of the label class
    std::vector<std::uint8_t> valid_mask;
};

// -w_y * log softmax(z)_y per pixel. Ignore pixels produce exactly zero loss
// and zero gradient; their logits never enter any mean.
template <typename T>
PixelCeResult<T> pixel_ce(const Tensor<T>& logits, const LabelMap& labels,
                          const std::vector<T>& class_weights,
                          std::uint8_t ignore_index = kIgnoreIndex) {
    if (logits.rank() != 3) {
        throw ShapeError("pixel_ce: logits must be [C,H,W], got " +
                         shape_str(logits.shape()));
    }
    const std::size_t ncls = logits.extent(0);
    const std::size_t h = logits.extent(1), w = logits.extent(2);
    if (labels.h != h || labels.w != w) {
        throw ShapeError("pixel_ce: label extents " + std::to_string(labels.h) +
                         "x" + std::to_string(labels.w) + " != logits " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    if (!class_weights.empty() && class_weights.size() != ncls) {
        throw ShapeError("pixel_ce: class weight count " +
                         std::to_string(class_weights.size()) + " != " +
                         std::to_string(ncls));
    }
    const std::size_t pixels = h * w;
    PixelCeResult<T> res;
    res.true_class_prob.assign(pixels, T(0));
    res.valid_mask.assign(pixels, 0);

    std::vector<T> loss(pixels, T(0));
    // softmax probabilities are saved for the backward pass
    auto probs = std::make_shared<std::vector<T>>(pixels * ncls, T(0));
    auto pixel_weight = std::make_shared<std::vector<T>>(pixels, T(0));
    auto label_copy = std::make_shared<std::vector<std::uint8_t>>(labels.ids);

    const T* z = logits.data();
    for (std::size_t px = 0; px < pixels; ++px) {
        const std::uint8_t y = labels.ids[px];
        if (y == ignore_index) continue;
        if (y >= ncls) {
            throw DataError("pixel_ce: label id " + std::to_string(int(y)) +
                            " out of range (classes: " + std::to_string(ncls) +
                            ", ignore: " + std::to_string(int(ignore_index)) +
                            ")");
        }
        res.valid_mask[px] = 1;
        T mx = z[px];
        for (std::size_t c = 1; c < ncls; ++c) {
            mx = std::max(mx, z[c * pixels + px]);
        }
        T denom(0);
        for (std::size_t c = 0; c < ncls; ++c) {
            const T e = std::exp(z[c * pixels + px] - mx);
            (*probs)[c * pixels + px] = e;
            denom += e;
        }
        const T inv = T(1) / denom;
        for (std::size_t c = 0; c < ncls; ++c) (*probs)[c * pixels + px] *= inv;
        const T wy = class_weights.empty() ? T(1) : class_weights[y];
        (*pixel_weight)[px] = wy;
        const T log_py = (z[y * pixels + px] - mx) - std::log(denom);
        loss[px] = -wy * log_py;
        res.true_class_prob[px] = (*probs)[y * pixels + px];
    }

    res.loss = detail::make_op<T>(
        Shape{h, w}, std::move(loss), {logits},
        [ncls, pixels, probs, pixel_weight, label_copy](
            detail::TensorNode<T>& self) {
            auto& pz = self.parents[0];
            pz->ensure_grad();
            for (std::size_t px = 0; px < pixels; ++px) {
                const T wy = (*pixel_weight)[px];
                if (wy == T(0)) continue;  // ignore pixel
                const T g = self.grad[px] * wy;
                if (g == T(0)) continue;
                const std::uint8_t y = (*label_copy)[px];
                for (std::size_t c = 0; c < ncls; ++c) {
                    const T p = (*probs)[c * pixels + px];
                    pz->grad[c * pixels + px] +=
                        g * (p - (c == y ? T(1) : T(0)));
                }
            }
        });
    return res;
}

// ---------------------------------------------------------------------------
// OHEM
// ---------------------------------------------------------------------------

struct OhemConfig {
    double thresh = 0.5;
    std::size_t min_kept = 10000;

    void validate() const {
        if (!(thresh > 0.0 && thresh < 1.0)) {
            throw ConfigError("ohem: thresh must be in (0,1)");
        }
        if (min_kept == 0) throw ConfigError("ohem: min_kept must be positive");
    }
};

// Keeps every valid pixel whose true-class confidence is below thresh; if
// fewer than min_kept qualify, the highest-loss remaining valid pixels are
// added until min(min_kept, valid_count) are kept.
template <typename T>
std::vector<std::uint8_t> ohem_select(std::span<const T> per_pixel_loss,
                                      std::span<const T> true_class_prob,
                                      const std::vector<std::uint8_t>& valid_mask,
                                      const OhemConfig& cfg) {
    cfg.validate();
    const std::size_t n = valid_mask.size();
    if (per_pixel_loss.size() != n || true_class_prob.size() != n) {
        throw ShapeError("ohem_select: mask/loss/prob length mismatch");
    }
    std::vector<std::uint8_t> keep(n, 0);
    std::size_t kept = 0, valid = 0;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
        if (!valid_mask[i]) continue;
        ++valid;
        if (static_cast<double>(true_class_prob[i]) < cfg.thresh) {
            keep[i] = 1;
            ++kept;
        } else {
            rest.push_back(i);
        }
    }
    const std::size_t want = std::min(cfg.min_kept, valid);
    if (kept < want) {
        std::size_t need = want - kept;
        std::partial_sort(rest.begin(), rest.begin() + need, rest.end(),
                          [&](std::size_t a, std::size_t b) {
                              return per_pixel_loss[a] > per_pixel_loss[b];
                          });
        for (std::size_t i = 0; i < need; ++i) keep[rest[i]] = 1;
    }
    return keep;
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

struct LossConfig {
    double main_weight = 1.0;
    double aux_weight = 0.4;
    std::uint8_t ignore_index = kIgnoreIndex;
    std::optional<ClassWeights> class_weights;
    std::optional<OhemConfig> ohem;

    void validate() const {
        if (main_weight < 0.0 || aux_weight < 0.0) {
            throw ConfigError("loss: head weights must be >= 0");
        }
        if (ohem) ohem->validate();
    }
};

template <typename T>
struct TotalLoss {
    Tensor<T> value;  // scalar
    bool zero_kept = false;
    std::size_t kept_count = 0;
};

namespace detail {

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& px_loss,
                      const std::vector<std::uint8_t>& mask,
                      std::size_t count) {
    std::vector<T> m(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) m[i] = mask[i] ? T(1) : T(0);
    Tensor<T> mask_t = Tensor<T>::from_vector(px_loss.shape(), std::move(m));
    return scale(sum(mul(px_loss, mask_t)), T(1) / static_cast<T>(count));
}

}  // namespace detail

// main_weight * mean(main over kept) + aux_weight * mean(aux over valid).
// OHEM applies to the main head only. Zero kept pixels yield a zero loss
// with the warning flag set rather than an error.
template <typename T>
TotalLoss<T> total_loss(const Tensor<T>& main_px,
                        const std::vector<std::uint8_t>& keep_mask,
                        const std::optional<Tensor<T>>& aux_px,
                        const std::vector<std::uint8_t>& valid_mask,
                        const LossConfig& cfg) {
    if (keep_mask.size() != main_px.numel()) {
        throw ShapeError("total_loss: keep mask length mismatch");
    }
    TotalLoss<T> out;
    const std::size_t kept =
        static_cast<std::size_t>(std::count(keep_mask.begin(), keep_mask.end(), 1));
    const std::size_t valid = static_cast<std::size_t>(
        std::count(valid_mask.begin(), valid_mask.end(), 1));
    out.kept_count = kept;
    if (kept == 0) {
        out.zero_kept = true;
        out.value = Tensor<T>::zeros({});
        return out;
    }
    Tensor<T> total = scale(detail::masked_mean(main_px, keep_mask, kept),
                            static_cast<T>(cfg.main_weight));
    if (aux_px && valid > 0) {
        if (valid_mask.size() != aux_px->numel()) {
            throw ShapeError("total_loss: valid mask length mismatch");
        }
        Tensor<T> aux = scale(detail::masked_mean(*aux_px, valid_mask, valid),
                              static_cast<T>(cfg.aux_weight));
        total = add(total, aux);
    }
    out.value = total;
    return out;
}

}  // namespace miniseg
