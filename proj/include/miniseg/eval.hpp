#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miniseg/decoder.hpp"
#include "miniseg/labels.hpp"
#include "miniseg/tensor.hpp"

// Confusion-matrix / IoU metrics, multi-scale + flip test-time aggregation,
// and analytic parameter / multiply-accumulate accounting.

namespace miniseg {

// ---------------------------------------------------------------------------
// Confusion matrix and IoU
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    // rows = ground truth, cols = prediction
    std::array<std::uint64_t, kNumClasses * kNumClasses> counts{};

    std::uint64_t& at(std::size_t gt, std::size_t pred) {
        return counts[gt * kNumClasses + pred];
    }
    std::uint64_t at(std::size_t gt, std::size_t pred) const {
        return counts[gt * kNumClasses + pred];
    }
    std::uint64_t total() const;
    void merge(const ConfusionMatrix& other);
};

// Accumulates per-pixel counts; ignore pixels are never counted.
void update_cm(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

struct IoUReport {
    // absent where the class has zero union (neither predicted nor present)
    std::array<std::optional<double>, kNumClasses> per_class;
    std::optional<double> miou;  // mean over present classes
};

IoUReport iou_report(const ConfusionMatrix& cm);

std::string iou_report_csv(const IoUReport& report);
std::string iou_report_summary(const IoUReport& report);

LabelMap argmax_map(const Tensor<float>& scores);

// ---------------------------------------------------------------------------
// Multi-scale prediction
// ---------------------------------------------------------------------------

// For each scale (and optionally the horizontal flip): resize, pad up to a
// multiple of 32, forward, softmax, crop, resize scores back, un-flip.
// Output is the arithmetic mean of all score maps: [19, H, W], channels
// summing to 1 per pixel.
Tensor<float> multi_scale_predict(const SegModel<float>& model,
                                  const Tensor<float>& image,
                                  const std::vector<double>& scales,
                                  bool flip = false);

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

struct CostReport {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;  // multiply-accumulates; 1 MAC = 2 FLOPs
    std::size_t input_h = 0, input_w = 0;
    std::string variant;
    std::vector<std::pair<std::string, std::uint64_t>> breakdown;

    std::string text() const;
};

// Attention score + weighted-sum MACs for one block: 2 * N * (N/R) * C with
// R = r^2. Exposed separately so the O(N^2/R) ratio can be checked directly.
std::uint64_t attention_score_apply_macs(std::uint64_t n, std::uint64_t c,
                                         std::uint64_t sr_ratio);

// Per-layer counting rules used by count_cost.
std::uint64_t conv_macs(std::uint64_t c_out, std::uint64_t c_in_per_group,
                        std::uint64_t kh, std::uint64_t kw, std::uint64_t out_h,
                        std::uint64_t out_w);
std::uint64_t linear_macs(std::uint64_t in, std::uint64_t out,
                          std::uint64_t tokens);

// Analytic per-layer counting (conv, linear and attention matmuls; norms and
// activations are excluded, upsampling carries no weights). Formula sheet:
//   conv:      C_out * (C_in/groups) * kh * kw * H' * W'
//   linear:    in * out * tokens
//   attention: N * (N/R) * d_head per head, for scores and for the
//              weighted sum (see attention_score_apply_macs)
CostReport count_cost(const ModelConfig& cfg, std::size_t input_h,
                      std::size_t input_w);

}  // namespace miniseg
