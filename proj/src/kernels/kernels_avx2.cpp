#include "miniseg/kernels.hpp"

// AVX2 + FMA variants. Built with -mavx2 -mfma in its own translation unit;
// dispatch.cpp only installs these after a runtime CPU check. Loop structure
// mirrors the scalar reference (same per-element accumulation order), so the
// only drift is FMA rounding.

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace miniseg::kernels::avx2 {

void gemm_f32(const float* a, const float* b, float* c, std::size_t m,
              std::size_t k, std::size_t n, bool acc) {
    if (!acc) {
        std::fill(c, c + m * n, 0.0f);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const __m256 av = _mm256_set1_ps(arow[p]);
            const float* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 16 <= n; j += 16) {
                __m256 c0 = _mm256_loadu_ps(crow + j);
                __m256 c1 = _mm256_loadu_ps(crow + j + 8);
                c0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j), c0);
                c1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j + 8), c1);
                _mm256_storeu_ps(crow + j, c0);
                _mm256_storeu_ps(crow + j + 8, c1);
            }
            for (; j + 8 <= n; j += 8) {
                __m256 cv = _mm256_loadu_ps(crow + j);
                cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j), cv);
                _mm256_storeu_ps(crow + j, cv);
            }
            const float as = arow[p];
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

void gemm_f64(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n, bool acc) {
    if (!acc) {
        std::fill(c, c + m * n, 0.0);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d av = _mm256_set1_pd(arow[p]);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(crow + j);
                cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), cv);
                _mm256_storeu_pd(crow + j, cv);
            }
            const double as = arow[p];
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

void add_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i),
                                                _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void add_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i),
                                                _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void sub_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i),
                                                _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_f32(const float* x, float alpha, float* out, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), av));
    }
    for (; i < n; ++i) out[i] = x[i] * alpha;
}

void scale_f64(const double* x, double alpha, double* out, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), av));
    }
    for (; i < n; ++i) out[i] = x[i] * alpha;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
        _mm256_storeu_ps(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

namespace {
inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}
inline double hsum256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_hadd_pd(lo, lo);
    return _mm_cvtsd_f64(lo);
}
}  // namespace

float reduce_sum_f32(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double reduce_sum_f64(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    }
    double s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

namespace {
// exp(x) for 8 lanes, classic range-reduction + degree-5 polynomial
// (cephes coefficients). Accurate to ~1 ulp over the softmax input range;
// the row maximum is subtracted first so arguments are <= 0.
inline __m256 exp256(__m256 x) {
    const __m256 kLog2e = _mm256_set1_ps(1.442695040888963407f);
    const __m256 kC1 = _mm256_set1_ps(0.693359375f);
    const __m256 kC2 = _mm256_set1_ps(-2.12194440e-4f);
    const __m256 kHi = _mm256_set1_ps(88.3762626647949f);
    const __m256 kLo = _mm256_set1_ps(-88.3762626647949f);
    const __m256 kHalf = _mm256_set1_ps(0.5f);
    const __m256 kOne = _mm256_set1_ps(1.0f);

    x = _mm256_min_ps(x, kHi);
    x = _mm256_max_ps(x, kLo);

    __m256 fx = _mm256_fmadd_ps(x, kLog2e, kHalf);
    fx = _mm256_floor_ps(fx);
    x = _mm256_fnmadd_ps(fx, kC1, x);
    x = _mm256_fnmadd_ps(fx, kC2, x);

    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, kHalf);
    y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, kOne));

    const __m256i n = _mm256_cvtps_epi32(fx);
    const __m256i pow2n =
        _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2n));
}
}  // namespace

void softmax_rows_f32(const float* x, float* out, std::size_t rows,
                      std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xi = x + r * cols;
        float* oi = out + r * cols;

        __m256 mxv = _mm256_set1_ps(-std::numeric_limits<float>::infinity());
        std::size_t j = 0;
        for (; j + 8 <= cols; j += 8) {
            mxv = _mm256_max_ps(mxv, _mm256_loadu_ps(xi + j));
        }
        float mx = -std::numeric_limits<float>::infinity();
        alignas(32) float lanes[8];
        _mm256_store_ps(lanes, mxv);
        for (float v : lanes) mx = std::max(mx, v);
        for (; j < cols; ++j) mx = std::max(mx, xi[j]);

        const __m256 mxb = _mm256_set1_ps(mx);
        __m256 sumv = _mm256_setzero_ps();
        j = 0;
        for (; j + 8 <= cols; j += 8) {
            const __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(xi + j), mxb));
            _mm256_storeu_ps(oi + j, e);
            sumv = _mm256_add_ps(sumv, e);
        }
        float sum = hsum256(sumv);
        for (; j < cols; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }

        const float inv = 1.0f / sum;
        const __m256 invv = _mm256_set1_ps(inv);
        j = 0;
        for (; j + 8 <= cols; j += 8) {
            _mm256_storeu_ps(oi + j, _mm256_mul_ps(_mm256_loadu_ps(oi + j), invv));
        }
        for (; j < cols; ++j) oi[j] *= inv;
    }
}

void adamw_update_f32(float* param, const float* grad, float* m, float* v,
                      std::size_t n, const AdamwScalars<float>& s) {
    const __m256 b1 = _mm256_set1_ps(s.beta1);
    const __m256 b2 = _mm256_set1_ps(s.beta2);
    const __m256 omb1 = _mm256_set1_ps(1.0f - s.beta1);
    const __m256 omb2 = _mm256_set1_ps(1.0f - s.beta2);
    const __m256 inv_bc1 = _mm256_set1_ps(1.0f / s.bias_corr1);
    const __m256 inv_bc2 = _mm256_set1_ps(1.0f / s.bias_corr2);
    const __m256 eps = _mm256_set1_ps(s.eps);
    const __m256 eta_alpha = _mm256_set1_ps(s.eta * s.alpha);
    const __m256 eta_lambda = _mm256_set1_ps(s.eta * s.lambda);

    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 g = _mm256_loadu_ps(grad + i);
        __m256 mv = _mm256_loadu_ps(m + i);
        __m256 vv = _mm256_loadu_ps(v + i);
        mv = _mm256_fmadd_ps(omb1, g, _mm256_mul_ps(b1, mv));
        vv = _mm256_fmadd_ps(omb2, _mm256_mul_ps(g, g), _mm256_mul_ps(b2, vv));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_mul_ps(mv, inv_bc1);
        const __m256 vhat = _mm256_mul_ps(vv, inv_bc2);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), eps);
        __m256 p = _mm256_loadu_ps(param + i);
        __m256 step = _mm256_mul_ps(eta_alpha, _mm256_div_ps(mhat, denom));
        step = _mm256_fmadd_ps(eta_lambda, p, step);
        _mm256_storeu_ps(param + i, _mm256_sub_ps(p, step));
    }
    if (i < n) {
        // Scalar tail must match the reference exactly, including the
        // division by bias_corr rather than multiplication by its inverse.
        for (; i < n; ++i) {
            const float g = grad[i];
            m[i] = s.beta1 * m[i] + (1.0f - s.beta1) * g;
            v[i] = s.beta2 * v[i] + (1.0f - s.beta2) * g * g;
            const float mhat = m[i] / s.bias_corr1;
            const float vhat = v[i] / s.bias_corr2;
            param[i] -= s.eta * (s.alpha * mhat / (std::sqrt(vhat) + s.eps) +
                                 s.lambda * param[i]);
        }
    }
}

void adamw_update_f64(double* param, const double* grad, double* m, double* v,
                      std::size_t n, const AdamwScalars<double>& s) {
    const __m256d b1 = _mm256_set1_pd(s.beta1);
    const __m256d b2 = _mm256_set1_pd(s.beta2);
    const __m256d omb1 = _mm256_set1_pd(1.0 - s.beta1);
    const __m256d omb2 = _mm256_set1_pd(1.0 - s.beta2);
    const __m256d inv_bc1 = _mm256_set1_pd(1.0 / s.bias_corr1);
    const __m256d inv_bc2 = _mm256_set1_pd(1.0 / s.bias_corr2);
    const __m256d eps = _mm256_set1_pd(s.eps);
    const __m256d eta_alpha = _mm256_set1_pd(s.eta * s.alpha);
    const __m256d eta_lambda = _mm256_set1_pd(s.eta * s.lambda);

    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d g = _mm256_loadu_pd(grad + i);
        __m256d mv = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        mv = _mm256_fmadd_pd(omb1, g, _mm256_mul_pd(b1, mv));
        vv = _mm256_fmadd_pd(omb2, _mm256_mul_pd(g, g), _mm256_mul_pd(b2, vv));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_mul_pd(mv, inv_bc1);
        const __m256d vhat = _mm256_mul_pd(vv, inv_bc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), eps);
        __m256d p = _mm256_loadu_pd(param + i);
        __m256d step = _mm256_mul_pd(eta_alpha, _mm256_div_pd(mhat, denom));
        step = _mm256_fmadd_pd(eta_lambda, p, step);
        _mm256_storeu_pd(param + i, _mm256_sub_pd(p, step));
    }
    for (; i < n; ++i) {
        const double g = grad[i];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
        const double mhat = m[i] / s.bias_corr1;
        const double vhat = v[i] / s.bias_corr2;
        param[i] -= s.eta * (s.alpha * mhat / (std::sqrt(vhat) + s.eps) +
                             s.lambda * param[i]);
    }
}

}  // namespace miniseg::kernels::avx2

#endif  // x86
