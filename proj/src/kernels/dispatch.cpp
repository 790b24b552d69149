#include "miniseg/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "kernels_avx2.hpp"

namespace miniseg::kernels {

namespace {

bool cpu_has_avx2() {
#if MINISEG_HAVE_AVX2_TU && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa resolve_isa() {
    if (const char* env = std::getenv("MINISEG_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Isa::avx2;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

template <typename T>
KernelTable<T> scalar_table() {
    KernelTable<T> t;
    t.gemm = &scalar::gemm<T>;
    t.add = &scalar::add<T>;
    t.sub = &scalar::sub<T>;
    t.mul = &scalar::mul<T>;
    t.scale = &scalar::scale<T>;
    t.axpy = &scalar::axpy<T>;
    t.reduce_sum = &scalar::reduce_sum<T>;
    t.softmax_rows = &scalar::softmax_rows<T>;
    t.gelu_fwd = &scalar::gelu_fwd<T>;
    t.gelu_bwd = &scalar::gelu_bwd<T>;
    t.adamw_update = &scalar::adamw_update<T>;
    t.transpose = &scalar::transpose<T>;
    return t;
}

KernelTable<float> make_f32() {
    KernelTable<float> t = scalar_table<float>();
#if MINISEG_HAVE_AVX2_TU
    if (active_isa() == Isa::avx2) {
        t.gemm = &avx2::gemm_f32;
        t.add = &avx2::add_f32;
        t.sub = &avx2::sub_f32;
        t.mul = &avx2::mul_f32;
        t.scale = &avx2::scale_f32;
        t.axpy = &avx2::axpy_f32;
        t.reduce_sum = &avx2::reduce_sum_f32;
        t.softmax_rows = &avx2::softmax_rows_f32;
        t.adamw_update = &avx2::adamw_update_f32;
        // gelu (erf-based) and transpose stay on the scalar reference.
    }
#endif
    return t;
}

KernelTable<double> make_f64() {
    KernelTable<double> t = scalar_table<double>();
#if MINISEG_HAVE_AVX2_TU
    if (active_isa() == Isa::avx2) {
        t.gemm = &avx2::gemm_f64;
        t.add = &avx2::add_f64;
        t.sub = &avx2::sub_f64;
        t.mul = &avx2::mul_f64;
        t.scale = &avx2::scale_f64;
        t.axpy = &avx2::axpy_f64;
        t.reduce_sum = &avx2::reduce_sum_f64;
        t.adamw_update = &avx2::adamw_update_f64;
    }
#endif
    return t;
}

}  // namespace

Isa active_isa() {
    static const Isa isa = resolve_isa();
    return isa;
}

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::avx2: return "avx2";
        case Isa::scalar: return "scalar";
    }
    return "unknown";
}

const KernelTable<float>& table_f32() {
    static const KernelTable<float> t = make_f32();
    return t;
}

const KernelTable<double>& table_f64() {
    static const KernelTable<double> t = make_f64();
    return t;
}

}  // namespace miniseg::kernels
