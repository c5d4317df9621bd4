#pragma once

#include "navwam/tensor.hpp"

namespace navwam::kernels {

// Matmul family. Each output element is a single serial dot product, so the
// OpenMP variants are bit-identical to the serial references for any thread
// count; the serial versions are kept as the reference under test.

// out = a * b
void matmul_serial(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_omp(const Tensor& a, const Tensor& b, Tensor& out);

// out = a * b^T
void matmul_nt_serial(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt_omp(const Tensor& a, const Tensor& b, Tensor& out);

// out = a^T * b
void matmul_tn_serial(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn_omp(const Tensor& a, const Tensor& b, Tensor& out);

// Dispatch: OpenMP when enabled and the work is big enough, serial otherwise.
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);

void set_parallel_enabled(bool on);
bool parallel_enabled();

}  // namespace navwam::kernels
