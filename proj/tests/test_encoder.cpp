// Encoder oracles: dense-attention equivalence at r=1, brute-force reduced
// attention at r>1, the Mix-FFN composition chain, and pyramid geometry.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "miniseg/encoder.hpp"
#include "testing/helpers.hpp"
#include "testing/attention_oracle.hpp"

using namespace miniseg;
using testing::random_tensor;

namespace {

EncoderConfig nano_config() {
    EncoderConfig cfg;
    cfg.variant_name = "nano";
    const std::size_t dims[4] = {8, 16, 32, 64};
    const std::size_t heads[4] = {1, 1, 2, 2};
    const std::size_t rs[4] = {8, 4, 2, 1};
    for (std::size_t i = 0; i < 4; ++i) {
        StageConfig& s = cfg.stages[i];
        s.embed_dim = dims[i];
        s.depth = 1;
        s.heads = heads[i];
        s.sr_ratio = rs[i];
        s.patch_kernel = i == 0 ? 7 : 3;
        s.patch_stride = i == 0 ? 4 : 2;
        s.patch_pad = i == 0 ? 3 : 1;
        s.mlp_expansion = 4;
    }
    return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// overlapped_patch_merge
// ---------------------------------------------------------------------------

TEST_CASE("patch merge geometry follows the floor formula") {
    Rng rng(1);
    StageConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.heads = 1;
    cfg.sr_ratio = 1;
    cfg.patch_kernel = 7;
    cfg.patch_stride = 4;
    cfg.patch_pad = 3;

    PatchMergeParams<float> p;
    p.weight = init::conv_weight<float>(8, 3, 7, rng);
    p.bias = Tensor<float>::zeros({8});
    p.norm = init::norm<float>(8);

    auto x = random_tensor<float>({3, 64, 64}, rng);
    TokenMap<float> tm = overlapped_patch_merge(x, p, cfg);
    CHECK(tm.h == 16);
    CHECK(tm.w == 16);
    CHECK(tm.tokens.extent(0) == 256);
    CHECK(tm.tokens.extent(0) == tm.h * tm.w);
    CHECK(tm.tokens.extent(1) == 8);

    StageConfig cfg2 = cfg;
    cfg2.patch_kernel = 3;
    cfg2.patch_stride = 2;
    cfg2.patch_pad = 1;
    PatchMergeParams<float> p2;
    p2.weight = init::conv_weight<float>(8, 3, 3, rng);
    p2.bias = Tensor<float>::zeros({8});
    p2.norm = init::norm<float>(8);
    auto x2 = random_tensor<float>({3, 16, 16}, rng);
    TokenMap<float> tm2 = overlapped_patch_merge(x2, p2, cfg2);
    CHECK(tm2.h == 8);
    CHECK(tm2.w == 8);
    CHECK(tm2.tokens.extent(0) == tm2.h * tm2.w);
}

TEST_CASE("non-overlapping patches are a configuration error") {
    Rng rng(2);
    StageConfig cfg;
    cfg.embed_dim = 4;
    cfg.depth = 1;
    cfg.heads = 1;
    cfg.sr_ratio = 1;
    cfg.patch_kernel = 2;
    cfg.patch_stride = 2;
    cfg.patch_pad = 0;
    PatchMergeParams<float> p;
    p.weight = init::conv_weight<float>(4, 3, 2, rng);
    p.bias = Tensor<float>::zeros({4});
    p.norm = init::norm<float>(4);
    auto x = random_tensor<float>({3, 8, 8}, rng);
    try {
        overlapped_patch_merge(x, p, cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("do not overlap") != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// efficient_self_attention
// ---------------------------------------------------------------------------

TEST_CASE("ESA with r=1 equals dense attention (oracle, 50 trials)") {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 8, heads = (trial % 2) ? 2 : 1;
        const std::size_t h = 3, w = 4, n = h * w;
        StageConfig cfg;
        cfg.embed_dim = c;
        cfg.heads = heads;
        cfg.sr_ratio = 1;
        auto p = testing::random_attention(c, 1, rng);
        auto tokens = random_tensor<float>({n, c}, rng);

        auto got = efficient_self_attention(tokens, h, w, p, cfg);
        std::vector<float> src(tokens.values().begin(), tokens.values().end());
        auto want = testing::oracle_mha(src, n, src, n, c, heads, p);
        for (std::size_t i = 0; i < want.size(); ++i) {
            worst = std::max(worst, double(std::abs(got.data()[i] - want[i])));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("single token: attention weight 1, output = out(V(token))") {
    Rng rng(4);
    const std::size_t c = 6;
    StageConfig cfg;
    cfg.embed_dim = c;
    cfg.heads = 1;
    cfg.sr_ratio = 1;
    auto p = testing::random_attention(c, 1, rng);
    auto token = random_tensor<float>({1, c}, rng);

    auto got = efficient_self_attention(token, 1, 1, p, cfg);
    std::vector<float> src(token.values().begin(), token.values().end());
    auto v = testing::oracle_linear(src, 1, c, c, p.v.weight, p.v.bias);
    auto want = testing::oracle_linear(v, 1, c, c, p.out.weight, p.out.bias);
    for (std::size_t i = 0; i < c; ++i) {
        CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
}

TEST_CASE("ESA with r=2 matches the brute-force reduced-attention oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 8, h = 4, w = 4, r = 2, n = h * w;
        StageConfig cfg;
        cfg.embed_dim = c;
        cfg.heads = 1;
        cfg.sr_ratio = r;
        auto p = testing::random_attention(c, r, rng);
        auto tokens = random_tensor<float>({n, c}, rng);

        auto got = efficient_self_attention(tokens, h, w, p, cfg);
        std::vector<float> src(tokens.values().begin(), tokens.values().end());
        auto reduced = testing::oracle_seq_reduce(src, h, w, c, r, p);
        auto want = testing::oracle_mha(src, n, reduced, n / (r * r), c, 1, p);
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("ESA divisibility violation names h, w and r") {
    Rng rng(6);
    StageConfig cfg;
    cfg.embed_dim = 4;
    cfg.heads = 1;
    cfg.sr_ratio = 2;
    auto p = testing::random_attention(4, 2, rng);
    auto tokens = random_tensor<float>({15, 4}, rng);
    try {
        efficient_self_attention(tokens, 3, 5, p, cfg);
        FAIL("expected GeometryError");
    } catch (const GeometryError& e) {
        const std::string msg = e.what();
        CHECK(msg.find('3') != std::string::npos);
        CHECK(msg.find('5') != std::string::npos);
        CHECK(msg.find('2') != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// mix_ffn
// ---------------------------------------------------------------------------

TEST_CASE("mix_ffn zero weights -> zero output, shape preserved") {
    const std::size_t c = 4, h = 3, w = 5, n = h * w;
    MixFfnParams<float> p;
    p.expand = {Tensor<float>::zeros({c, c * 2}), Tensor<float>::zeros({c * 2})};
    p.dw_weight = Tensor<float>::zeros({c * 2, 1, 3, 3});
    p.dw_bias = Tensor<float>::zeros({c * 2});
    p.project = {Tensor<float>::zeros({c * 2, c}), Tensor<float>::zeros({c})};
    Rng rng(7);
    auto tokens = random_tensor<float>({n, c}, rng);
    auto out = mix_ffn(tokens, h, w, p, 2);
    CHECK(out.shape() == tokens.shape());
    for (float v : out.values()) CHECK(v == 0.0f);
}

TEST_CASE("mix_ffn matches the step-by-step composition oracle") {
    // 2x2 map, expansion 1, random weights
    Rng rng(8);
    const std::size_t c = 3, h = 2, w = 2, n = h * w, e = c;
    MixFfnParams<float> p;
    p.expand = {random_tensor<float>({c, e}, rng), random_tensor<float>({e}, rng)};
    p.dw_weight = random_tensor<float>({e, 1, 3, 3}, rng);
    p.dw_bias = random_tensor<float>({e}, rng);
    p.project = {random_tensor<float>({e, c}, rng),
                 random_tensor<float>({c}, rng)};
    auto tokens = random_tensor<float>({n, c}, rng);

    auto got = mix_ffn(tokens, h, w, p, 1);

    // oracle: linear -> depthwise 3x3 (pad 1) -> exact gelu -> linear
    std::vector<float> src(tokens.values().begin(), tokens.values().end());
    auto expanded = testing::oracle_linear(src, n, c, e, p.expand.weight, p.expand.bias);
    std::vector<float> conv(n * e, 0.0f);
    for (std::size_t ch = 0; ch < e; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double acc = p.dw_bias.data()[ch];
                for (int ky = -1; ky <= 1; ++ky) {
                    for (int kx = -1; kx <= 1; ++kx) {
                        const int iy = int(y) + ky, ix = int(x) + kx;
                        if (iy < 0 || iy >= int(h) || ix < 0 || ix >= int(w))
                            continue;
                        acc += double(expanded[(iy * w + ix) * e + ch]) *
                               double(p.dw_weight.data()[(ch * 9) +
                                                         (ky + 1) * 3 + kx + 1]);
                    }
                }
                conv[(y * w + x) * e + ch] = float(acc);
            }
        }
    }
    for (auto& v : conv) {
        v = float(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
    }
    auto want = testing::oracle_linear(conv, n, e, c, p.project.weight, p.project.bias);
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
}

// ---------------------------------------------------------------------------
// transformer_block
// ---------------------------------------------------------------------------

TEST_CASE("zeroed output projections make the block an identity") {
    Rng rng(9);
    const std::size_t c = 8, h = 2, w = 4;
    StageConfig cfg;
    cfg.embed_dim = c;
    cfg.heads = 2;
    cfg.sr_ratio = 1;
    cfg.mlp_expansion = 2;
    BlockParams<float> p;
    p.norm1 = init::norm<float>(c);
    p.attn = testing::random_attention(c, 1, rng);
    p.attn.out = {Tensor<float>::zeros({c, c}), Tensor<float>::zeros({c})};
    p.norm2 = init::norm<float>(c);
    p.ffn.expand = init::linear<float>(c, 2 * c, rng);
    p.ffn.dw_weight = init::conv_weight<float>(2 * c, 1, 3, rng);
    p.ffn.dw_bias = Tensor<float>::zeros({2 * c});
    p.ffn.project = {Tensor<float>::zeros({2 * c, c}), Tensor<float>::zeros({c})};

    auto tokens = random_tensor<float>({h * w, c}, rng);
    auto out = transformer_block(tokens, h, w, p, cfg);
    for (std::size_t i = 0; i < tokens.numel(); ++i) {
        CHECK(out.data()[i] == tokens.data()[i]);
    }
}

TEST_CASE("block equals the composition of its two sublayers") {
    Rng rng(10);
    const std::size_t c = 8, h = 4, w = 4;
    StageConfig cfg;
    cfg.embed_dim = c;
    cfg.heads = 2;
    cfg.sr_ratio = 2;
    cfg.mlp_expansion = 2;
    BlockParams<float> p;
    p.norm1 = init::norm<float>(c);
    p.attn = testing::random_attention(c, 2, rng);
    p.norm2 = init::norm<float>(c);
    p.ffn.expand = init::linear<float>(c, 2 * c, rng);
    p.ffn.dw_weight = init::conv_weight<float>(2 * c, 1, 3, rng);
    p.ffn.dw_bias = random_tensor<float>({2 * c}, rng, false, -0.1, 0.1);
    p.ffn.project = init::linear<float>(2 * c, c, rng);

    auto tokens = random_tensor<float>({h * w, c}, rng);
    auto got = transformer_block(tokens, h, w, p, cfg);

    auto x1 = add(tokens, efficient_self_attention(norm_apply(tokens, p.norm1),
                                                   h, w, p.attn, cfg));
    auto want = add(x1, mix_ffn(norm_apply(x1, p.norm2), h, w, p.ffn,
                                cfg.mlp_expansion));
    for (std::size_t i = 0; i < want.numel(); ++i) {
        CHECK(got.data()[i] == want.data()[i]);
    }
    CHECK(got.shape() == tokens.shape());
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

TEST_CASE("nano encode: pyramid extents 16,8,4,2 on 64x64, under 1s") {
    Rng rng(11);
    Encoder<float> enc(nano_config(), rng);
    auto image = random_tensor<float>({3, 64, 64}, rng);
    const auto t0 = std::chrono::steady_clock::now();
    FeaturePyramid<float> pyr = enc.encode(image);
    const auto t1 = std::chrono::steady_clock::now();
    const std::size_t want_c[4] = {8, 16, 32, 64};
    const std::size_t want_hw[4] = {16, 8, 4, 2};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(pyr.levels[i].extent(0) == want_c[i]);
        CHECK(pyr.levels[i].extent(1) == want_hw[i]);
        CHECK(pyr.levels[i].extent(2) == want_hw[i]);
    }
    CHECK(std::chrono::duration<double>(t1 - t0).count() < 1.0);
}

TEST_CASE("encode rejects inputs not divisible by 32") {
    Rng rng(12);
    Encoder<float> enc(nano_config(), rng);
    auto image = random_tensor<float>({3, 48, 64}, rng);
    try {
        enc.encode(image);
        FAIL("expected GeometryError");
    } catch (const GeometryError& e) {
        CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
}

TEST_CASE("no positional encoding: resolution changes just work") {
    Rng rng(13);
    Encoder<float> enc(nano_config(), rng);
    auto a = random_tensor<float>({3, 64, 64}, rng);
    auto b = random_tensor<float>({3, 96, 128}, rng);
    CHECK_NOTHROW(enc.encode(a));
    FeaturePyramid<float> pyr = enc.encode(b);
    CHECK(pyr.levels[0].extent(1) == 24);
    CHECK(pyr.levels[0].extent(2) == 32);
}

TEST_CASE("gradient flows to the stage-1 patch weights") {
    Rng rng(14);
    Encoder<float> enc(nano_config(), rng);
    auto image = random_tensor<float>({3, 32, 32}, rng);
    FeaturePyramid<float> pyr = enc.encode(image);
    backward(sum(pyr.levels[3]));
    auto g = enc.stage(0).patch.weight.grad();
    REQUIRE(!g.empty());
    double norm = 0;
    for (float v : g) norm += double(v) * v;
    CHECK(norm > 0.0);
}

TEST_CASE("zeroed sublayer projections reduce encode to patch merging") {
    Rng rng(15);
    Encoder<float> enc(nano_config(), rng);
    for (std::size_t i = 0; i < 4; ++i) {
        for (auto& blk : enc.stage(i).blocks) {
            std::fill(blk.attn.out.weight.values().begin(),
                      blk.attn.out.weight.values().end(), 0.0f);
            std::fill(blk.attn.out.bias.values().begin(),
                      blk.attn.out.bias.values().end(), 0.0f);
            std::fill(blk.ffn.project.weight.values().begin(),
                      blk.ffn.project.weight.values().end(), 0.0f);
            std::fill(blk.ffn.project.bias.values().begin(),
                      blk.ffn.project.bias.values().end(), 0.0f);
        }
    }
    auto image = random_tensor<float>({3, 32, 32}, rng);
    FeaturePyramid<float> got = enc.encode(image);

    // patch-merge-only composition
    Tensor<float> x = image;
    for (std::size_t i = 0; i < 4; ++i) {
        TokenMap<float> tm = overlapped_patch_merge(x, enc.stage(i).patch,
                                                    enc.config().stages[i]);
        Tensor<float> tokens = norm_apply(tm.tokens, enc.stage(i).norm);
        x = tokens_to_map(tokens, tm.h, tm.w);
        for (std::size_t j = 0; j < x.numel(); ++j) {
            CHECK(got.levels[i].data()[j] == x.data()[j]);
        }
    }
}

TEST_CASE("encoder config validation") {
    EncoderConfig cfg = nano_config();
    cfg.stages[0].heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = nano_config();
    cfg.stages[1].patch_stride = 3;  // breaks the 1/8 resolution
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = nano_config();
    cfg.stages[2].patch_kernel = 2;  // kernel <= stride
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
