#include "miniseg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Reference kernels. This translation unit is built with -ffp-contract=off
// so the scalar results are the plain IEEE mul/add sequence the SIMD
// variants are tested against.

namespace miniseg::kernels::scalar {

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool acc) {
    if (!acc) {
        std::fill(c, c + m * n, T(0));
    }
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void add(const T* x, const T* y, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void sub(const T* x, const T* y, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

template <typename T>
void mul(const T* x, const T* y, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void scale(const T* x, T alpha, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * alpha;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T reduce_sum(const T* x, std::size_t n) {
    T acc(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
void softmax_rows(const T* x, T* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = x + r * cols;
        T* oi = out + r * cols;
        T mx = xi[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
        T sum(0);
        for (std::size_t j = 0; j < cols; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < cols; ++j) oi[j] *= inv;
    }
}

namespace {
// Exact (erf-based) GELU; the tanh approximation is deliberately not used so
// hand-computed fixtures stay stable.
template <typename T>
inline T gelu_one(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}
template <typename T>
inline T gelu_grad_one(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
    const T pdf = T(0.3989422804014326779) * std::exp(T(-0.5) * x * x);
    return cdf + x * pdf;
}
}  // namespace

template <typename T>
void gelu_fwd(const T* x, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = gelu_one(x[i]);
}

template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * gelu_grad_one(x[i]);
}

template <typename T>
void adamw_update(T* param, const T* grad, T* m, T* v, std::size_t n,
                  const AdamwScalars<T>& s) {
    for (std::size_t i = 0; i < n; ++i) {
        const T g = grad[i];
        m[i] = s.beta1 * m[i] + (T(1) - s.beta1) * g;
        v[i] = s.beta2 * v[i] + (T(1) - s.beta2) * g * g;
        const T mhat = m[i] / s.bias_corr1;
        const T vhat = v[i] / s.bias_corr2;
        param[i] -= s.eta * (s.alpha * mhat / (std::sqrt(vhat) + s.eps) +
                             s.lambda * param[i]);
    }
}

template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

#define MINISEG_INSTANTIATE(T)                                                 \
    template void gemm<T>(const T*, const T*, T*, std::size_t, std::size_t,   \
                          std::size_t, bool);                                  \
    template void add<T>(const T*, const T*, T*, std::size_t);                 \
    template void sub<T>(const T*, const T*, T*, std::size_t);                 \
    template void mul<T>(const T*, const T*, T*, std::size_t);                 \
    template void scale<T>(const T*, T, T*, std::size_t);                      \
    template void axpy<T>(T, const T*, T*, std::size_t);                       \
    template T reduce_sum<T>(const T*, std::size_t);                           \
    template void softmax_rows<T>(const T*, T*, std::size_t, std::size_t);     \
    template void gelu_fwd<T>(const T*, T*, std::size_t);                      \
    template void gelu_bwd<T>(const T*, const T*, T*, std::size_t);            \
    template void adamw_update<T>(T*, const T*, T*, T*, std::size_t,           \
                                  const AdamwScalars<T>&);                     \
    template void transpose<T>(const T*, T*, std::size_t, std::size_t);

MINISEG_INSTANTIATE(float)
MINISEG_INSTANTIATE(double)

#undef MINISEG_INSTANTIATE

}  // namespace miniseg::kernels::scalar
