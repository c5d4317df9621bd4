#include "navwam/kernels.hpp"

#include <atomic>
#include <cstdint>

#include "navwam/errors.hpp"

namespace navwam::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds the parallel-for overhead dominates.
constexpr std::size_t kParallelThreshold = 64 * 1024;

void check_mm(const Tensor& a, const Tensor& b, std::size_t ak, std::size_t bk,
              const char* what) {
  if (ak != bk) throw ShapeError(std::string(what) + ": inner dimensions differ");
}

}  // namespace

void set_parallel_enabled(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

void matmul_serial(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.rows, "matmul");
  out = Tensor(a.rows, b.cols);
  const std::size_t k = a.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = &a.d[i * k];
    double* or_ = &out.d[i * b.cols];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = &b.d[p * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) or_[j] += av * br[j];
    }
  }
}

void matmul_omp(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.rows, "matmul");
  out = Tensor(a.rows, b.cols);
  const std::size_t k = a.cols;
  const std::int64_t rows = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* ar = &a.d[static_cast<std::size_t>(i) * k];
    double* or_ = &out.d[static_cast<std::size_t>(i) * b.cols];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = &b.d[p * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) or_[j] += av * br[j];
    }
  }
}

void matmul_nt_serial(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.cols, "matmul_nt");
  out = Tensor(a.rows, b.rows);
  const std::size_t k = a.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = &a.d[i * k];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* br = &b.d[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out.d[i * b.rows + j] = acc;
    }
  }
}

void matmul_nt_omp(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.cols, "matmul_nt");
  out = Tensor(a.rows, b.rows);
  const std::size_t k = a.cols;
  const std::int64_t rows = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* ar = &a.d[static_cast<std::size_t>(i) * k];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* br = &b.d[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out.d[static_cast<std::size_t>(i) * b.rows + j] = acc;
    }
  }
}

void matmul_tn_serial(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.rows, b.rows, "matmul_tn");
  out = Tensor(a.cols, b.cols);
  for (std::size_t p = 0; p < a.rows; ++p) {
    const double* ar = &a.d[p * a.cols];
    const double* br = &b.d[p * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double av = ar[i];
      double* or_ = &out.d[i * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) or_[j] += av * br[j];
    }
  }
}

void matmul_tn_omp(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.rows, b.rows, "matmul_tn");
  out = Tensor(a.cols, b.cols);
  const std::int64_t ocols = static_cast<std::int64_t>(a.cols);
  // Parallel over output rows; each (i, j) is its own serial accumulation.
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < ocols; ++i) {
    double* or_ = &out.d[static_cast<std::size_t>(i) * b.cols];
    for (std::size_t p = 0; p < a.rows; ++p) {
      const double av = a.d[p * a.cols + static_cast<std::size_t>(i)];
      const double* br = &b.d[p * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) or_[j] += av * br[j];
    }
  }
}

namespace {
bool use_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return g_parallel.load() && m * k * n >= kParallelThreshold && m > 1;
}
}  // namespace

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  if (use_parallel(a.rows, a.cols, b.cols)) {
    matmul_omp(a, b, out);
  } else {
    matmul_serial(a, b, out);
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  if (use_parallel(a.rows, a.cols, b.rows)) {
    matmul_nt_omp(a, b, out);
  } else {
    matmul_nt_serial(a, b, out);
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  if (use_parallel(a.cols, a.rows, b.cols)) {
    matmul_tn_omp(a, b, out);
  } else {
    matmul_tn_serial(a, b, out);
  }
}

}  // namespace navwam::kernels
