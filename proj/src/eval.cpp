#include "miniseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace miniseg {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void update_cm(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
    if (pred.h != gt.h || pred.w != gt.w) {
        throw ShapeError("update_cm: extents " + std::to_string(pred.h) + "x" +
                         std::to_string(pred.w) + " vs " + std::to_string(gt.h) +
                         "x" + std::to_string(gt.w));
    }
    for (std::size_t i = 0; i < gt.ids.size(); ++i) {
        const std::uint8_t g = gt.ids[i];
        if (g == kIgnoreIndex) continue;
        const std::uint8_t p = pred.ids[i];
        if (g >= kNumClasses || p >= kNumClasses) {
            throw DataError("update_cm: label id out of range (gt " +
                            std::to_string(int(g)) + ", pred " +
                            std::to_string(int(p)) + ")");
        }
        ++cm.at(g, p);
    }
}

IoUReport iou_report(const ConfusionMatrix& cm) {
    IoUReport rep;
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t o = 0; o < kNumClasses; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const std::uint64_t uni = tp + fp + fn;
        if (uni == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(uni);
        rep.per_class[c] = iou;
        sum += iou;
        ++present;
    }
    if (present > 0) rep.miou = sum / static_cast<double>(present);
    return rep;
}

std::string iou_report_csv(const IoUReport& report) {
    std::ostringstream os;
    os << "class_id,class_name,iou\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        os << c << ',' << kClassNames[c] << ',';
        if (report.per_class[c]) {
            os << std::setprecision(6) << std::fixed << *report.per_class[c];
        } else {
            os << "absent";
        }
        os << '\n';
    }
    return os.str();
}

std::string iou_report_summary(const IoUReport& report) {
    std::ostringstream os;
    os << std::setprecision(4) << std::fixed;
    std::size_t present = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!report.per_class[c]) continue;
        ++present;
        os << std::setw(14) << kClassNames[c] << "  " << *report.per_class[c]
           << '\n';
    }
    if (report.miou) {
        os << "mIoU over " << present << " classes: " << *report.miou << '\n';
    } else {
        os << "no classes present\n";
    }
    return os.str();
}

LabelMap argmax_map(const Tensor<float>& scores) {
    const std::size_t c = scores.extent(0), h = scores.extent(1),
                      w = scores.extent(2);
    LabelMap out(h, w);
    const float* d = scores.data();
    const std::size_t pixels = h * w;
    for (std::size_t px = 0; px < pixels; ++px) {
        std::size_t best = 0;
        float bv = d[px];
        for (std::size_t ch = 1; ch < c; ++ch) {
            const float v = d[ch * pixels + px];
            if (v > bv) {
                bv = v;
                best = ch;
            }
        }
        out.ids[px] = static_cast<std::uint8_t>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-scale prediction
// ---------------------------------------------------------------------------

namespace {

std::size_t round_up32(std::size_t v) { return (v + 31) / 32 * 32; }

Tensor<float> pad_to(const Tensor<float>& x, std::size_t ph, std::size_t pw) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (ph == h && pw == w) return x;
    std::vector<float> out(c * ph * pw, 0.0f);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
            std::copy_n(x.data() + (ch * h + y) * w, w,
                        out.data() + (ch * ph + y) * pw);
        }
    }
    return Tensor<float>::from_vector({c, ph, pw}, std::move(out));
}

Tensor<float> crop_to(const Tensor<float>& x, std::size_t hh, std::size_t ww) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (hh == h && ww == w) return x;
    std::vector<float> out(c * hh * ww);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < hh; ++y) {
            std::copy_n(x.data() + (ch * h + y) * w, ww,
                        out.data() + (ch * hh + y) * ww);
        }
    }
    return Tensor<float>::from_vector({c, hh, ww}, std::move(out));
}

Tensor<float> single_scale_scores(const SegModel<float>& model,
                                  const Tensor<float>& image, double scl,
                                  bool flipped, std::size_t out_h,
                                  std::size_t out_w) {
    const std::size_t h = image.extent(1), w = image.extent(2);
    const std::size_t sh = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(h * scl)));
    const std::size_t sw = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(w * scl)));
    Tensor<float> scaled = bilinear_resize(image, sh, sw, false);
    if (flipped) scaled = flip_horizontal(scaled);
    Tensor<float> padded = pad_to(scaled, round_up32(sh), round_up32(sw));
    Tensor<float> logits = model.forward_full(padded).main;
    Tensor<float> scores = softmax(logits, 0);
    scores = crop_to(scores, sh, sw);
    scores = bilinear_resize(scores, out_h, out_w, false);
    if (flipped) scores = flip_horizontal(scores);
    return scores;
}

}  // namespace

Tensor<float> multi_scale_predict(const SegModel<float>& model,
                                  const Tensor<float>& image,
                                  const std::vector<double>& scales,
                                  bool flip) {
    if (scales.empty()) {
        throw ContractError("multi_scale_predict: scales must be nonempty");
    }
    if (image.rank() != 3 || image.extent(0) != 3) {
        throw ShapeError("multi_scale_predict: image must be [3,H,W], got " +
                         shape_str(image.shape()));
    }
    autograd::NoGradGuard no_grad;
    const std::size_t h = image.extent(1), w = image.extent(2);
    const std::size_t passes = scales.size() * (flip ? 2 : 1);
    if (passes == 1) {
        // single pass: return the score map untouched (bit-identical to a
        // plain forward + softmax)
        return single_scale_scores(model, image, scales[0], false, h, w);
    }
    Tensor<float> acc = Tensor<float>::zeros({kNumClasses, h, w});
    for (double s : scales) {
        acc = add(acc, single_scale_scores(model, image, s, false, h, w));
        if (flip) {
            acc = add(acc, single_scale_scores(model, image, s, true, h, w));
        }
    }
    return scale(acc, 1.0f / static_cast<float>(passes));
}

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

std::uint64_t attention_score_apply_macs(std::uint64_t n, std::uint64_t c,
                                         std::uint64_t sr_ratio) {
    const std::uint64_t reduced = n / (sr_ratio * sr_ratio);
    return 2 * n * reduced * c;  // scores + weighted sum, summed over heads
}

std::uint64_t conv_macs(std::uint64_t c_out, std::uint64_t c_in_per_group,
                        std::uint64_t kh, std::uint64_t kw, std::uint64_t out_h,
                        std::uint64_t out_w) {
    return c_out * c_in_per_group * kh * kw * out_h * out_w;
}

std::uint64_t linear_macs(std::uint64_t in, std::uint64_t out,
                          std::uint64_t tokens) {
    return in * out * tokens;
}

namespace {

struct CostAccum {
    CostReport rep;

    void add(const std::string& name, std::uint64_t macs, std::uint64_t params) {
        rep.macs += macs;
        rep.params += params;
        rep.breakdown.emplace_back(name, macs);
    }
    void add_params(std::uint64_t params) { rep.params += params; }
};

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s,
                     std::size_t p) {
    return (in + 2 * p - k) / s + 1;
}

}  // namespace

CostReport count_cost(const ModelConfig& cfg, std::size_t input_h,
                      std::size_t input_w) {
    cfg.validate();
    if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
        throw GeometryError("count_cost: input extents must be positive "
                            "multiples of 32");
    }
    CostAccum acc;
    acc.rep.variant = cfg.encoder.variant_name;
    acc.rep.input_h = input_h;
    acc.rep.input_w = input_w;

    std::size_t c_in = 3, h = input_h, w = input_w;
    std::array<std::size_t, 4> stage_h{}, stage_w{};
    for (std::size_t i = 0; i < 4; ++i) {
        const StageConfig& sc = cfg.encoder.stages[i];
        const std::string tag = "encoder.stage" + std::to_string(i + 1);
        h = conv_out(h, sc.patch_kernel, sc.patch_stride, sc.patch_pad);
        w = conv_out(w, sc.patch_kernel, sc.patch_stride, sc.patch_pad);
        stage_h[i] = h;
        stage_w[i] = w;
        const std::uint64_t c = sc.embed_dim;
        const std::uint64_t n = static_cast<std::uint64_t>(h) * w;
        acc.add(tag + ".patch",
                conv_macs(c, c_in, sc.patch_kernel, sc.patch_kernel, h, w),
                c * c_in * sc.patch_kernel * sc.patch_kernel + c);
        acc.add_params(2 * c);  // patch norm

        const std::uint64_t red = n / sc.reduction();
        for (std::size_t b = 0; b < sc.depth; ++b) {
            const std::string bt = tag + ".block" + std::to_string(b);
            acc.add_params(2 * c);  // norm1
            // q over all tokens; k,v over the reduced sequence
            acc.add(bt + ".attn.qkv",
                    linear_macs(c, c, n) + 2 * linear_macs(c, c, red),
                    3 * (c * c + c));
            if (sc.sr_ratio > 1) {
                acc.add(bt + ".attn.sr",
                        conv_macs(c, c, sc.sr_ratio, sc.sr_ratio,
                                  h / sc.sr_ratio, w / sc.sr_ratio),
                        c * c * sc.sr_ratio * sc.sr_ratio + c);
                acc.add_params(2 * c);  // sr norm
            }
            acc.add(bt + ".attn.scores",
                    attention_score_apply_macs(n, c, sc.sr_ratio), 0);
            acc.add(bt + ".attn.out", linear_macs(c, c, n), c * c + c);
            acc.add_params(2 * c);  // norm2
            const std::uint64_t e = c * sc.mlp_expansion;
            acc.add(bt + ".ffn.expand", linear_macs(c, e, n), c * e + e);
            acc.add(bt + ".ffn.dw", conv_macs(e, 1, 3, 3, h, w), e * 9 + e);
            acc.add(bt + ".ffn.project", linear_macs(e, c, n), e * c + c);
        }
        acc.add_params(2 * c);  // stage norm
        c_in = sc.embed_dim;
    }

    const std::uint64_t cdec = cfg.decoder.unify_dim;
    const std::uint64_t ncls = cfg.decoder.num_classes;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::uint64_t ci = cfg.encoder.stages[i].embed_dim;
        const std::uint64_t ni =
            static_cast<std::uint64_t>(stage_h[i]) * stage_w[i];
        acc.add("decoder.unify" + std::to_string(i + 1),
                linear_macs(ci, cdec, ni), ci * cdec + cdec);
    }
    const std::uint64_t np =
        static_cast<std::uint64_t>(stage_h[0]) * stage_w[0];
    acc.add("decoder.fuse", linear_macs(4 * cdec, cdec, np),
            4 * cdec * cdec + cdec);
    acc.add_params(2 * cdec);  // fuse norm
    acc.add("decoder.classify", linear_macs(cdec, ncls, np),
            cdec * ncls + ncls);

    if (cfg.with_aux) {
        const std::uint64_t c2 = cfg.encoder.stages[1].embed_dim;
        const std::uint64_t ch = cfg.aux_channels;
        const std::uint64_t n2 =
            static_cast<std::uint64_t>(stage_h[1]) * stage_w[1];
        acc.add("aux.conv", conv_macs(ch, c2, 3, 3, stage_h[1], stage_w[1]),
                ch * c2 * 9 + ch);
        acc.add_params(2 * ch);
        acc.add("aux.classify", linear_macs(ch, ncls, n2), ch * ncls + ncls);
    }
    return acc.rep;
}

std::string CostReport::text() const {
    std::ostringstream os;
    os << "variant: " << variant << "\n"
       << "input: " << input_h << "x" << input_w << "\n"
       << "params: " << params << "\n"
       << "macs: " << macs << " (" << std::setprecision(3) << std::fixed
       << static_cast<double>(macs) / 1e9 << " GMACs; 1 MAC = 2 FLOPs)\n";
    os << "breakdown (MACs):\n";
    for (const auto& [name, m] : breakdown) {
        os << "  " << name << ": " << m << "\n";
    }
    return os.str();
}

}  // namespace miniseg
