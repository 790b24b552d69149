#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "miniseg/tensor.hpp"

// Hierarchical Mix-Transformer encoder: four stages of overlapped patch
// merging followed by transformer blocks (efficient self-attention with
// spatial sequence reduction + Mix-FFN). No positional encoding anywhere;
// the depthwise 3x3 inside Mix-FFN carries the positional information.

namespace miniseg {

struct StageConfig {
    std::size_t embed_dim = 0;     // C_i
    std::size_t depth = 0;
    std::size_t heads = 0;
    std::size_t sr_ratio = 1;      // r_i; keys/values shrink by R = r_i^2
    std::size_t patch_kernel = 0;
    std::size_t patch_stride = 0;
    std::size_t patch_pad = 0;
    std::size_t mlp_expansion = 4;

    std::size_t head_dim() const { return embed_dim / heads; }
    std::size_t reduction() const { return sr_ratio * sr_ratio; }
};

struct EncoderConfig {
    std::array<StageConfig, 4> stages;
    std::string variant_name;

    void validate() const;
};

inline void EncoderConfig::validate() const {
    std::size_t cum_stride = 1;
    static const std::size_t kWantCum[4] = {4, 8, 16, 32};
    for (std::size_t i = 0; i < 4; ++i) {
        const StageConfig& s = stages[i];
        if (s.embed_dim == 0 || s.depth == 0 || s.heads == 0 || s.sr_ratio == 0 ||
            s.mlp_expansion == 0) {
            throw ConfigError("stage " + std::to_string(i + 1) +
                              ": extents must be positive");
        }
        if (s.embed_dim % s.heads != 0) {
            throw ConfigError("stage " + std::to_string(i + 1) + ": embed_dim " +
                              std::to_string(s.embed_dim) + " not divisible by " +
                              std::to_string(s.heads) + " heads");
        }
        if (s.patch_kernel <= s.patch_stride) {
            throw ConfigError("stage " + std::to_string(i + 1) +
                              ": patches do not overlap (kernel " +
                              std::to_string(s.patch_kernel) + " <= stride " +
                              std::to_string(s.patch_stride) + ")");
        }
        cum_stride *= s.patch_stride;
        if (cum_stride != kWantCum[i]) {
            throw ConfigError("stage " + std::to_string(i + 1) +
                              ": cumulative stride " + std::to_string(cum_stride) +
                              " != " + std::to_string(kWantCum[i]) +
                              " (pyramid must be 1/4,1/8,1/16,1/32)");
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]
};

template <typename T>
struct NormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
struct PatchMergeParams {
    Tensor<T> weight;  // [C_out, C_in, k, k]
    Tensor<T> bias;    // [C_out]
    NormParams<T> norm;
};

template <typename T>
struct AttentionParams {
    LinearParams<T> q, k, v, out;
    // sequence reduction (only used when sr_ratio > 1)
    Tensor<T> sr_weight;  // [C, C, r, r]
    Tensor<T> sr_bias;    // [C]
    NormParams<T> sr_norm;
};

template <typename T>
struct MixFfnParams {
    LinearParams<T> expand;   // C -> E
    Tensor<T> dw_weight;      // [E, 1, 3, 3] depthwise
    Tensor<T> dw_bias;        // [E]
    LinearParams<T> project;  // E -> C
};

template <typename T>
struct BlockParams {
    NormParams<T> norm1;
    AttentionParams<T> attn;
    NormParams<T> norm2;
    MixFfnParams<T> ffn;
};

template <typename T>
struct StageParams {
    PatchMergeParams<T> patch;
    std::vector<BlockParams<T>> blocks;
    NormParams<T> norm;  // closes the stage before reshaping to a map
};

// Named parameters in registration order; the order is what the checkpoint
// format serializes, so it must be deterministic.
template <typename T>
using ParameterSet = std::vector<std::pair<std::string, Tensor<T>>>;

namespace init {

constexpr double kProjStd = 0.02;

template <typename T>
LinearParams<T> linear(std::size_t in, std::size_t out, Rng& rng) {
    return {Tensor<T>::trunc_normal({in, out}, T(kProjStd), rng, true),
            Tensor<T>::zeros({out}, true)};
}

template <typename T>
NormParams<T> norm(std::size_t c) {
    return {Tensor<T>::full({c}, T(1), true), Tensor<T>::zeros({c}, true)};
}

template <typename T>
Tensor<T> conv_weight(std::size_t c_out, std::size_t c_in_per_group,
                      std::size_t k, Rng& rng) {
    return Tensor<T>::trunc_normal({c_out, c_in_per_group, k, k}, T(kProjStd),
                                   rng, true);
}

}  // namespace init

namespace detail {

template <typename T>
void collect_linear(ParameterSet<T>& ps, const std::string& name,
                    const LinearParams<T>& p) {
    ps.emplace_back(name + ".weight", p.weight);
    ps.emplace_back(name + ".bias", p.bias);
}

template <typename T>
void collect_norm(ParameterSet<T>& ps, const std::string& name,
                  const NormParams<T>& p) {
    ps.emplace_back(name + ".gamma", p.gamma);
    ps.emplace_back(name + ".beta", p.beta);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Token/map plumbing
// ---------------------------------------------------------------------------

template <typename T>
struct TokenMap {
    Tensor<T> tokens;  // [N, C]
    std::size_t h = 0, w = 0;
};

// [C,H,W] map -> [N,C] token rows.
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
    const std::size_t c = map.extent(0), h = map.extent(1), w = map.extent(2);
    return transpose2d(reshape(map, {c, h * w}));
}

// [N,C] tokens -> [C,H,W] map.
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t h, std::size_t w) {
    const std::size_t c = tokens.extent(1);
    return reshape(transpose2d(tokens), {c, h, w});
}

template <typename T>
Tensor<T> linear_apply(const Tensor<T>& x, const LinearParams<T>& p) {
    return add_rowvec(matmul(x, p.weight), p.bias);
}

constexpr double kLayerNormEps = 1e-5;

template <typename T>
Tensor<T> norm_apply(const Tensor<T>& x, const NormParams<T>& p) {
    return layer_norm(x, p.gamma, p.beta, T(kLayerNormEps));
}

// ---------------------------------------------------------------------------
// Encoder operations
// ---------------------------------------------------------------------------

// Strided overlapping convolution tokenizer: conv(k,s,p) -> flatten ->
// layer norm. k > s keeps neighbouring patches continuous.
template <typename T>
TokenMap<T> overlapped_patch_merge(const Tensor<T>& x,
                                   const PatchMergeParams<T>& p,
                                   const StageConfig& cfg) {
    if (cfg.patch_kernel <= cfg.patch_stride) {
        throw ConfigError("overlapped_patch_merge: patches do not overlap "
                          "(kernel " + std::to_string(cfg.patch_kernel) +
                          " <= stride " + std::to_string(cfg.patch_stride) + ")");
    }
    Tensor<T> conv = conv2d(x, p.weight, p.bias, cfg.patch_stride, cfg.patch_pad);
    const std::size_t h = conv.extent(1), w = conv.extent(2);
    Tensor<T> tokens = norm_apply(map_to_tokens(conv), p.norm);
    return {tokens, h, w};
}

// Multi-head attention where K and V come from a spatially reduced copy of
// the token map: conv with kernel = stride = r shrinks the sequence from N
// to N/R (R = r^2), then layer norm. Queries keep all N positions, so the
// score matrix is [N, N/R] and the arithmetic drops by exactly R.
template <typename T>
Tensor<T> efficient_self_attention(const Tensor<T>& tokens, std::size_t h,
                                   std::size_t w, const AttentionParams<T>& p,
                                   const StageConfig& cfg) {
    const std::size_t n = tokens.extent(0);
    if (n != h * w) {
        throw GeometryError("efficient_self_attention: token count " +
                            std::to_string(n) + " != h*w = " +
                            std::to_string(h * w));
    }
    const std::size_t r = cfg.sr_ratio;
    if (h % r != 0 || w % r != 0) {
        throw GeometryError("efficient_self_attention: map " + std::to_string(h) +
                            "x" + std::to_string(w) +
                            " not divisible by sr_ratio " + std::to_string(r));
    }

    Tensor<T> q = linear_apply(tokens, p.q);

    Tensor<T> kv_src = tokens;
    if (r > 1) {
        Tensor<T> map = tokens_to_map(tokens, h, w);
        Tensor<T> red = conv2d(map, p.sr_weight, p.sr_bias, r, 0);
        kv_src = norm_apply(map_to_tokens(red), p.sr_norm);
    }
    Tensor<T> k = linear_apply(kv_src, p.k);
    Tensor<T> v = linear_apply(kv_src, p.v);

    const std::size_t d = cfg.head_dim();
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<Tensor<T>> heads;
    heads.reserve(cfg.heads);
    for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
        Tensor<T> qh = slice_cols(q, hh * d, (hh + 1) * d);
        Tensor<T> kh = slice_cols(k, hh * d, (hh + 1) * d);
        Tensor<T> vh = slice_cols(v, hh * d, (hh + 1) * d);
        Tensor<T> scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt_d);
        Tensor<T> attn = softmax(scores, 1);
        heads.push_back(matmul(attn, vh));
    }
    Tensor<T> ctx = cfg.heads == 1 ? heads[0] : concat_cols(heads);
    return linear_apply(ctx, p.out);
}

// MLP -> depthwise 3x3 conv -> GELU -> MLP. The residual lives in the block.
template <typename T>
Tensor<T> mix_ffn(const Tensor<T>& tokens, std::size_t h, std::size_t w,
                  const MixFfnParams<T>& p, std::size_t expansion) {
    const std::size_t n = tokens.extent(0);
    if (n != h * w) {
        throw GeometryError("mix_ffn: token count " + std::to_string(n) +
                            " != h*w = " + std::to_string(h * w));
    }
    Tensor<T> expanded = linear_apply(tokens, p.expand);
    if (expanded.extent(1) != tokens.extent(1) * expansion) {
        throw ConfigError("mix_ffn: expand weight does not realize expansion " +
                          std::to_string(expansion));
    }
    const std::size_t e = expanded.extent(1);
    Tensor<T> map = tokens_to_map(expanded, h, w);
    Tensor<T> dw = conv2d(map, p.dw_weight, p.dw_bias, 1, 1, e);
    Tensor<T> act = gelu(dw);
    Tensor<T> back = map_to_tokens(act);
    return linear_apply(back, p.project);
}

// Pre-norm residual block: x += ESA(LN(x)); x += MixFFN(LN(x)).
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& tokens, std::size_t h,
                            std::size_t w, const BlockParams<T>& p,
                            const StageConfig& cfg) {
    Tensor<T> x = add(tokens,
                      efficient_self_attention(norm_apply(tokens, p.norm1), h, w,
                                               p.attn, cfg));
    return add(x, mix_ffn(norm_apply(x, p.norm2), h, w, p.ffn, cfg.mlp_expansion));
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> levels;  // [C_i, H/4 / 2^(i-1), ...]
};

template <typename T>
class Encoder {
public:
    Encoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::size_t c_in = 3;
        for (std::size_t i = 0; i < 4; ++i) {
            const StageConfig& sc = cfg_.stages[i];
            StageParams<T> sp;
            sp.patch.weight = Tensor<T>::trunc_normal(
                {sc.embed_dim, c_in, sc.patch_kernel, sc.patch_kernel},
                T(init::kProjStd), rng, true);
            sp.patch.bias = Tensor<T>::zeros({sc.embed_dim}, true);
            sp.patch.norm = init::norm<T>(sc.embed_dim);
            for (std::size_t b = 0; b < sc.depth; ++b) {
                BlockParams<T> bp;
                const std::size_t c = sc.embed_dim;
                bp.norm1 = init::norm<T>(c);
                bp.attn.q = init::linear<T>(c, c, rng);
                bp.attn.k = init::linear<T>(c, c, rng);
                bp.attn.v = init::linear<T>(c, c, rng);
                bp.attn.out = init::linear<T>(c, c, rng);
                if (sc.sr_ratio > 1) {
                    bp.attn.sr_weight =
                        init::conv_weight<T>(c, c, sc.sr_ratio, rng);
                    bp.attn.sr_bias = Tensor<T>::zeros({c}, true);
                    bp.attn.sr_norm = init::norm<T>(c);
                }
                bp.norm2 = init::norm<T>(c);
                const std::size_t e = c * sc.mlp_expansion;
                bp.ffn.expand = init::linear<T>(c, e, rng);
                bp.ffn.dw_weight = init::conv_weight<T>(e, 1, 3, rng);
                bp.ffn.dw_bias = Tensor<T>::zeros({e}, true);
                bp.ffn.project = init::linear<T>(e, c, rng);
                sp.blocks.push_back(std::move(bp));
            }
            sp.norm = init::norm<T>(sc.embed_dim);
            stages_[i] = std::move(sp);
            c_in = sc.embed_dim;
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    StageParams<T>& stage(std::size_t i) { return stages_[i]; }
    const StageParams<T>& stage(std::size_t i) const { return stages_[i]; }

    FeaturePyramid<T> encode(const Tensor<T>& image) const {
        if (image.rank() != 3 || image.extent(0) != 3) {
            throw ShapeError("encode: image must be [3,H,W], got " +
                             shape_str(image.shape()));
        }
        const std::size_t h = image.extent(1), w = image.extent(2);
        if (h % 32 != 0 || w % 32 != 0) {
            throw GeometryError("encode: input " + std::to_string(h) + "x" +
                                std::to_string(w) +
                                " not divisible by 32; pad the input first");
        }
        FeaturePyramid<T> pyr;
        Tensor<T> x = image;
        for (std::size_t i = 0; i < 4; ++i) {
            const StageConfig& sc = cfg_.stages[i];
            const StageParams<T>& sp = stages_[i];
            TokenMap<T> tm = overlapped_patch_merge(x, sp.patch, sc);
            Tensor<T> tokens = tm.tokens;
            for (const auto& bp : sp.blocks) {
                tokens = transformer_block(tokens, tm.h, tm.w, bp, sc);
            }
            tokens = norm_apply(tokens, sp.norm);
            x = tokens_to_map(tokens, tm.h, tm.w);
            pyr.levels[i] = x;
        }
        return pyr;
    }

    void collect_parameters(ParameterSet<T>& ps,
                            const std::string& prefix = "encoder") const {
        for (std::size_t i = 0; i < 4; ++i) {
            const std::string sp = prefix + ".stage" + std::to_string(i + 1);
            const StageParams<T>& st = stages_[i];
            ps.emplace_back(sp + ".patch.weight", st.patch.weight);
            ps.emplace_back(sp + ".patch.bias", st.patch.bias);
            detail::collect_norm(ps, sp + ".patch.norm", st.patch.norm);
            for (std::size_t b = 0; b < st.blocks.size(); ++b) {
                const std::string bp = sp + ".block" + std::to_string(b);
                const BlockParams<T>& blk = st.blocks[b];
                detail::collect_norm(ps, bp + ".norm1", blk.norm1);
                detail::collect_linear(ps, bp + ".attn.q", blk.attn.q);
                detail::collect_linear(ps, bp + ".attn.k", blk.attn.k);
                detail::collect_linear(ps, bp + ".attn.v", blk.attn.v);
                detail::collect_linear(ps, bp + ".attn.out", blk.attn.out);
                if (blk.attn.sr_weight.defined()) {
                    ps.emplace_back(bp + ".attn.sr.weight", blk.attn.sr_weight);
                    ps.emplace_back(bp + ".attn.sr.bias", blk.attn.sr_bias);
                    detail::collect_norm(ps, bp + ".attn.sr_norm",
                                         blk.attn.sr_norm);
                }
                detail::collect_norm(ps, bp + ".norm2", blk.norm2);
                detail::collect_linear(ps, bp + ".ffn.expand", blk.ffn.expand);
                ps.emplace_back(bp + ".ffn.dw.weight", blk.ffn.dw_weight);
                ps.emplace_back(bp + ".ffn.dw.bias", blk.ffn.dw_bias);
                detail::collect_linear(ps, bp + ".ffn.project", blk.ffn.project);
            }
            detail::collect_norm(ps, sp + ".norm", st.norm);
        }
    }

private:
    EncoderConfig cfg_;
    std::array<StageParams<T>, 4> stages_;
};

}  // namespace miniseg
