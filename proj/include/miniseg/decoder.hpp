#pragma once

#include <optional>
#include <string>

#include "miniseg/encoder.hpp"

// All-MLP decode head: unify every pyramid level to C channels, upsample to
// the 1/4 grid, concatenate, fuse 4C -> C, classify C -> N_cls. Plus the FCN
// auxiliary head hanging off stage 2.

namespace miniseg {

struct DecoderConfig {
    std::size_t unify_dim = 256;   // C
    std::size_t num_classes = 19;  // N_cls
    // Disables the norm+ReLU after the fusion linear, leaving the bare
    // four-line composition (used by the step-by-step oracle tests).
    bool strict_fusion = false;

    void validate() const {
        if (num_classes < 2) {
            throw ConfigError("decoder: num_classes must be >= 2, got " +
                              std::to_string(num_classes));
        }
        if (unify_dim == 0) throw ConfigError("decoder: unify_dim must be positive");
    }
};

template <typename T>
struct DecoderParams {
    std::array<LinearParams<T>, 4> unify;  // C_i -> C
    LinearParams<T> fuse;                  // 4C -> C
    NormParams<T> fuse_norm;
    LinearParams<T> classify;              // C -> N_cls
};

template <typename T>
class Decoder {
public:
    Decoder(DecoderConfig cfg, const EncoderConfig& enc, Rng& rng)
        : cfg_(cfg) {
        cfg_.validate();
        for (std::size_t i = 0; i < 4; ++i) {
            params_.unify[i] =
                init::linear<T>(enc.stages[i].embed_dim, cfg_.unify_dim, rng);
        }
        params_.fuse = init::linear<T>(4 * cfg_.unify_dim, cfg_.unify_dim, rng);
        params_.fuse_norm = init::norm<T>(cfg_.unify_dim);
        params_.classify = init::linear<T>(cfg_.unify_dim, cfg_.num_classes, rng);
    }

    const DecoderConfig& config() const { return cfg_; }
    DecoderParams<T>& params() { return params_; }
    const DecoderParams<T>& params() const { return params_; }

    // logits at 1/4 resolution: [N_cls, H/4, W/4]
    Tensor<T> decode(const FeaturePyramid<T>& pyr) const {
        return all_mlp_decode(pyr, params_, cfg_);
    }

    void collect_parameters(ParameterSet<T>& ps,
                            const std::string& prefix = "decoder") const {
        for (std::size_t i = 0; i < 4; ++i) {
            detail::collect_linear(ps, prefix + ".unify" + std::to_string(i + 1),
                                   params_.unify[i]);
        }
        detail::collect_linear(ps, prefix + ".fuse", params_.fuse);
        detail::collect_norm(ps, prefix + ".fuse_norm", params_.fuse_norm);
        detail::collect_linear(ps, prefix + ".classify", params_.classify);
    }

private:
    DecoderConfig cfg_;
    DecoderParams<T> params_;
};

template <typename T>
Tensor<T> all_mlp_decode(const FeaturePyramid<T>& pyr,
                         const DecoderParams<T>& p, const DecoderConfig& cfg) {
    const std::size_t h1 = pyr.levels[0].extent(1);
    const std::size_t w1 = pyr.levels[0].extent(2);
    std::vector<Tensor<T>> unified;
    unified.reserve(4);
    for (std::size_t i = 0; i < 4; ++i) {
        const Tensor<T>& lvl = pyr.levels[i];
        if (lvl.rank() != 3 ||
            lvl.extent(0) != p.unify[i].weight.extent(0)) {
            throw ConfigError("all_mlp_decode: level " + std::to_string(i + 1) +
                              " channels " + shape_str(lvl.shape()) +
                              " do not match unify weight " +
                              shape_str(p.unify[i].weight.shape()));
        }
        Tensor<T> tokens = linear_apply(map_to_tokens(lvl), p.unify[i]);
        Tensor<T> map = tokens_to_map(tokens, lvl.extent(1), lvl.extent(2));
        unified.push_back(bilinear_resize(map, h1, w1, false));
    }
    Tensor<T> cat = concat0(unified);  // [4C, h1, w1]
    Tensor<T> fused = linear_apply(map_to_tokens(cat), p.fuse);
    if (!cfg.strict_fusion) {
        fused = relu(norm_apply(fused, p.fuse_norm));
    }
    Tensor<T> logits = linear_apply(fused, p.classify);
    return tokens_to_map(logits, h1, w1);
}

// ---------------------------------------------------------------------------
// FCN auxiliary head (attached to pyramid level 2)
// ---------------------------------------------------------------------------

template <typename T>
struct AuxHeadParams {
    Tensor<T> conv_weight;  // [ch, C2, 3, 3]
    Tensor<T> conv_bias;    // [ch]
    NormParams<T> norm;
    LinearParams<T> classify;  // ch -> N_cls
};

// 3x3 conv -> norm -> ReLU -> 1x1 conv to class logits, at F2 resolution.
template <typename T>
Tensor<T> fcn_aux_head(const Tensor<T>& f2, const AuxHeadParams<T>& p) {
    Tensor<T> conv = conv2d(f2, p.conv_weight, p.conv_bias, 1, 1);
    const std::size_t h = conv.extent(1), w = conv.extent(2);
    Tensor<T> tokens = relu(norm_apply(map_to_tokens(conv), p.norm));
    return tokens_to_map(linear_apply(tokens, p.classify), h, w);
}

template <typename T>
class AuxHead {
public:
    AuxHead(std::size_t in_channels, std::size_t hidden, std::size_t num_classes,
            Rng& rng) {
        params_.conv_weight =
            Tensor<T>::trunc_normal({hidden, in_channels, 3, 3},
                                    T(init::kProjStd), rng, true);
        params_.conv_bias = Tensor<T>::zeros({hidden}, true);
        params_.norm = init::norm<T>(hidden);
        params_.classify = init::linear<T>(hidden, num_classes, rng);
    }

    Tensor<T> forward(const Tensor<T>& f2) const {
        return fcn_aux_head(f2, params_);
    }

    AuxHeadParams<T>& params() { return params_; }

    void collect_parameters(ParameterSet<T>& ps,
                            const std::string& prefix = "aux") const {
        ps.emplace_back(prefix + ".conv.weight", params_.conv_weight);
        ps.emplace_back(prefix + ".conv.bias", params_.conv_bias);
        detail::collect_norm(ps, prefix + ".norm", params_.norm);
        detail::collect_linear(ps, prefix + ".classify", params_.classify);
    }

private:
    AuxHeadParams<T> params_;
};

// ---------------------------------------------------------------------------
// Full segmentation model
// ---------------------------------------------------------------------------

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    bool with_aux = false;
    std::size_t aux_channels = 64;

    void validate() const {
        encoder.validate();
        decoder.validate();
        if (with_aux && aux_channels == 0) {
            throw ConfigError("model: aux_channels must be positive");
        }
    }
};

template <typename T>
struct ForwardOutput {
    Tensor<T> main;  // [N_cls, H, W]
    Tensor<T> aux;   // undefined when the aux head is disabled
};

template <typename T>
class SegModel {
public:
    SegModel(ModelConfig cfg, Rng& rng)
        : cfg_(std::move(cfg)),
          encoder_(cfg_.encoder, rng),
          decoder_(cfg_.decoder, cfg_.encoder, rng) {
        cfg_.validate();
        if (cfg_.with_aux) {
            aux_.emplace(cfg_.encoder.stages[1].embed_dim, cfg_.aux_channels,
                         cfg_.decoder.num_classes, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    Encoder<T>& encoder() { return encoder_; }
    const Encoder<T>& encoder() const { return encoder_; }
    Decoder<T>& decoder() { return decoder_; }
    const Decoder<T>& decoder() const { return decoder_; }
    bool has_aux() const { return aux_.has_value(); }
    AuxHead<T>& aux_head() { return *aux_; }

    // encode -> decode -> upsample logits to input resolution (plus the aux
    // branch from F2 when enabled).
    ForwardOutput<T> forward_full(const Tensor<T>& image) const {
        const std::size_t h = image.extent(1), w = image.extent(2);
        FeaturePyramid<T> pyr = encoder_.encode(image);
        ForwardOutput<T> out;
        out.main = bilinear_resize(decoder_.decode(pyr), h, w, false);
        if (aux_) {
            out.aux = bilinear_resize(aux_->forward(pyr.levels[1]), h, w, false);
        }
        return out;
    }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        encoder_.collect_parameters(ps);
        decoder_.collect_parameters(ps);
        if (aux_) aux_->collect_parameters(ps);
        return ps;
    }

private:
    ModelConfig cfg_;
    Encoder<T> encoder_;
    Decoder<T> decoder_;
    std::optional<AuxHead<T>> aux_;
};

}  // namespace miniseg
