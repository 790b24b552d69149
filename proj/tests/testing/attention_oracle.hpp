#pragma once

#include <cmath>
#include <vector>

#include "miniseg/encoder.hpp"
#include "testing/helpers.hpp"

// Brute-force attention oracles: explicit [N, M] score matrices, plain
// loops, double accumulation. Test-side only.

namespace testing {

using miniseg::AttentionParams;
using miniseg::Tensor;

// Multi-head attention with an explicit [N, M] score matrix; kv may come
// from a reduced sequence.
inline std::vector<float> oracle_mha(const std::vector<float>& q_src, std::size_t n,
                              const std::vector<float>& kv_src, std::size_t m,
                              std::size_t c, std::size_t heads,
                              const AttentionParams<float>& p) {
    const std::size_t d = c / heads;
    auto q = oracle_linear(q_src, n, c, c, p.q.weight, p.q.bias);
    auto k = oracle_linear(kv_src, m, c, c, p.k.weight, p.k.bias);
    auto v = oracle_linear(kv_src, m, c, c, p.v.weight, p.v.bias);
    std::vector<float> ctx(n * c, 0.0f);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> row(m);
            double mx = -1e30;
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0;
                for (std::size_t dd = 0; dd < d; ++dd) {
                    s += double(q[i * c + h * d + dd]) *
                         double(k[j * c + h * d + dd]);
                }
                s /= std::sqrt(double(d));
                row[j] = s;
                mx = std::max(mx, s);
            }
            double denom = 0;
            for (std::size_t j = 0; j < m; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            for (std::size_t j = 0; j < m; ++j) row[j] /= denom;
            for (std::size_t dd = 0; dd < d; ++dd) {
                double acc = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    acc += row[j] * double(v[j * c + h * d + dd]);
                }
                ctx[i * c + h * d + dd] = float(acc);
            }
        }
    }
    return oracle_linear(ctx, n, c, c, p.out.weight, p.out.bias);
}

// conv with kernel == stride == r over a [C,h,w] map laid out as tokens
inline std::vector<float> oracle_seq_reduce(const std::vector<float>& tokens,
                                     std::size_t h, std::size_t w,
                                     std::size_t c, std::size_t r,
                                     const AttentionParams<float>& p) {
    const std::size_t rh = h / r, rw = w / r;
    std::vector<float> out(rh * rw * c);
    for (std::size_t oy = 0; oy < rh; ++oy) {
        for (std::size_t ox = 0; ox < rw; ++ox) {
            for (std::size_t co = 0; co < c; ++co) {
                double acc = p.sr_bias.data()[co];
                for (std::size_t ci = 0; ci < c; ++ci) {
                    for (std::size_t ky = 0; ky < r; ++ky) {
                        for (std::size_t kx = 0; kx < r; ++kx) {
                            const std::size_t iy = oy * r + ky;
                            const std::size_t ix = ox * r + kx;
                            acc += double(tokens[(iy * w + ix) * c + ci]) *
                                   double(p.sr_weight.data()
                                              [((co * c + ci) * r + ky) * r + kx]);
                        }
                    }
                }
                out[(oy * rw + ox) * c + co] = float(acc);
            }
        }
    }
    return oracle_layer_norm(out, rh * rw, c, p.sr_norm.gamma, p.sr_norm.beta,
                             miniseg::kLayerNormEps);
}

inline AttentionParams<float> random_attention(std::size_t c, std::size_t r, miniseg::Rng& rng) {
    AttentionParams<float> p;
    p.q = miniseg::init::linear<float>(c, c, rng);
    p.k = miniseg::init::linear<float>(c, c, rng);
    p.v = miniseg::init::linear<float>(c, c, rng);
    p.out = miniseg::init::linear<float>(c, c, rng);
    for (auto* lp : {&p.q, &p.k, &p.v, &p.out}) {
        for (auto& b : lp->bias.values()) {
            b = float(rng.uniform(-0.1, 0.1));
        }
    }
    if (r > 1) {
        p.sr_weight = miniseg::init::conv_weight<float>(c, c, r, rng);
        p.sr_bias = random_tensor<float>({c}, rng, true, -0.1, 0.1);
        p.sr_norm = miniseg::init::norm<float>(c);
    }
    return p;
}


}  // namespace testing
