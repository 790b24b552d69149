#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops behind the tensor/optimizer code. Every kernel
// has a scalar reference implementation; AVX2 variants are selected at
// runtime when the CPU supports them. The active table is resolved once per
// process and can be forced with MINISEG_KERNELS=scalar|avx2.

namespace miniseg::kernels {

enum class Isa { scalar, avx2 };

// Scalars of one AdamW step that are shared across all elements of a
// parameter: the moment coefficients, the bias-correction divisors for the
// current step count, and the decoupled update multipliers.
template <typename T>
struct AdamwScalars {
    T beta1;
    T beta2;
    T bias_corr1;  // 1 - beta1^t
    T bias_corr2;  // 1 - beta2^t
    T eps;
    T alpha;
    T eta;
    T lambda;
};

template <typename T>
struct KernelTable {
    // c[m,n] = a[m,k] * b[k,n], accumulating into c when acc is set.
    void (*gemm)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n, bool acc);
    void (*add)(const T* x, const T* y, T* out, std::size_t n);
    void (*sub)(const T* x, const T* y, T* out, std::size_t n);
    void (*mul)(const T* x, const T* y, T* out, std::size_t n);
    void (*scale)(const T* x, T alpha, T* out, std::size_t n);
    // y += alpha * x
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    T (*reduce_sum)(const T* x, std::size_t n);
    // Row-wise stable softmax over a contiguous [rows, cols] matrix.
    void (*softmax_rows)(const T* x, T* out, std::size_t rows, std::size_t cols);
    void (*gelu_fwd)(const T* x, T* out, std::size_t n);
    // dx = dy * d(gelu)/dx evaluated at x
    void (*gelu_bwd)(const T* x, const T* dy, T* dx, std::size_t n);
    // In-place decoupled-weight-decay Adam update on one parameter array.
    void (*adamw_update)(T* param, const T* grad, T* m, T* v, std::size_t n,
                         const AdamwScalars<T>& s);
    void (*transpose)(const T* src, T* dst, std::size_t rows, std::size_t cols);
};

Isa active_isa();
const char* isa_name(Isa isa);

const KernelTable<float>& table_f32();
const KernelTable<double>& table_f64();

template <typename T>
const KernelTable<T>& table();

template <>
inline const KernelTable<float>& table<float>() { return table_f32(); }
template <>
inline const KernelTable<double>& table<double>() { return table_f64(); }

// Reference implementations, always available; the equivalence tests compare
// the dispatched table against these.
namespace scalar {
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool acc);
template <typename T>
void add(const T* x, const T* y, T* out, std::size_t n);
template <typename T>
void sub(const T* x, const T* y, T* out, std::size_t n);
template <typename T>
void mul(const T* x, const T* y, T* out, std::size_t n);
template <typename T>
void scale(const T* x, T alpha, T* out, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T>
T reduce_sum(const T* x, std::size_t n);
template <typename T>
void softmax_rows(const T* x, T* out, std::size_t rows, std::size_t cols);
template <typename T>
void gelu_fwd(const T* x, T* out, std::size_t n);
template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, std::size_t n);
template <typename T>
void adamw_update(T* param, const T* grad, T* m, T* v, std::size_t n,
                  const AdamwScalars<T>& s);
template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols);
}  // namespace scalar

}  // namespace miniseg::kernels
