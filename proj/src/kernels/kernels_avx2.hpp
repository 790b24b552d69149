#pragma once

#include "miniseg/kernels.hpp"

// Internal declarations for the AVX2 translation unit; only dispatch.cpp
// should include this.

#if defined(__x86_64__) || defined(__i386__)
#define MINISEG_HAVE_AVX2_TU 1

namespace miniseg::kernels::avx2 {

void gemm_f32(const float*, const float*, float*, std::size_t, std::size_t,
              std::size_t, bool);
void gemm_f64(const double*, const double*, double*, std::size_t, std::size_t,
              std::size_t, bool);
void add_f32(const float*, const float*, float*, std::size_t);
void add_f64(const double*, const double*, double*, std::size_t);
void sub_f32(const float*, const float*, float*, std::size_t);
void sub_f64(const double*, const double*, double*, std::size_t);
void mul_f32(const float*, const float*, float*, std::size_t);
void mul_f64(const double*, const double*, double*, std::size_t);
void scale_f32(const float*, float, float*, std::size_t);
void scale_f64(const double*, double, double*, std::size_t);
void axpy_f32(float, const float*, float*, std::size_t);
void axpy_f64(double, const double*, double*, std::size_t);
float reduce_sum_f32(const float*, std::size_t);
double reduce_sum_f64(const double*, std::size_t);
void softmax_rows_f32(const float*, float*, std::size_t, std::size_t);
void adamw_update_f32(float*, const float*, float*, float*, std::size_t,
                      const AdamwScalars<float>&);
void adamw_update_f64(double*, const double*, double*, double*, std::size_t,
                      const AdamwScalars<double>&);

}  // namespace miniseg::kernels::avx2

#else
#define MINISEG_HAVE_AVX2_TU 0
#endif
