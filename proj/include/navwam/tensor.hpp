#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace navwam {

// Row-major rank-2 tensor of 64-bit scalars. Vectors are 1 x n, scalars 1 x 1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> d;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), d(r * c, fill) {}

  static Tensor row(std::initializer_list<double> vals) {
    Tensor t(1, vals.size());
    std::size_t i = 0;
    for (double v : vals) t.d[i++] = v;
    return t;
  }

  double& at(std::size_t i, std::size_t j) { return d[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return d[i * cols + j]; }

  std::size_t size() const { return rows * cols; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

inline bool all_finite(const Tensor& t) {
  for (double v : t.d) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace navwam
