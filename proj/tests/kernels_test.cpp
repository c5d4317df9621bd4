#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include "navwam/errors.hpp"
#include "navwam/kernels.hpp"
#include "navwam/rng.hpp"

using namespace navwam;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (double& v : t.d) v = rng.normal();
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.d[i] != b.d[i]) return false;
  }
  return true;
}

}  // namespace

// The OpenMP kernels must be bit-identical to the serial references for any
// shape: each output element is one serial dot product either way.
TEST_CASE("omp matmul family matches serial reference bit-for-bit") {
  Rng rng(3);
  const std::size_t shapes[][3] = {{1, 1, 1},   {3, 5, 7},    {26, 64, 64},
                                   {64, 64, 64}, {128, 32, 96}, {97, 13, 41}};
  for (const auto& s : shapes) {
    const Tensor a = random_tensor(rng, s[0], s[1]);
    const Tensor b = random_tensor(rng, s[1], s[2]);
    Tensor serial, omp;
    kernels::matmul_serial(a, b, serial);
    kernels::matmul_omp(a, b, omp);
    CHECK(bit_equal(serial, omp));

    const Tensor bt = random_tensor(rng, s[2], s[1]);
    kernels::matmul_nt_serial(a, bt, serial);
    kernels::matmul_nt_omp(a, bt, omp);
    CHECK(bit_equal(serial, omp));

    const Tensor at = random_tensor(rng, s[1], s[0]);
    const Tensor b2 = random_tensor(rng, s[1], s[2]);
    kernels::matmul_tn_serial(at, b2, serial);
    kernels::matmul_tn_omp(at, b2, omp);
    CHECK(bit_equal(serial, omp));
  }
}

TEST_CASE("dispatch result independent of the parallel toggle") {
  Rng rng(4);
  const Tensor a = random_tensor(rng, 80, 80);
  const Tensor b = random_tensor(rng, 80, 80);
  Tensor on, off;
  kernels::set_parallel_enabled(true);
  kernels::matmul(a, b, on);
  kernels::set_parallel_enabled(false);
  kernels::matmul(a, b, off);
  kernels::set_parallel_enabled(true);
  CHECK(bit_equal(on, off));
}

TEST_CASE("matmul shape errors") {
  Tensor a(2, 3), b(4, 2), out;
  CHECK_THROWS_AS(kernels::matmul(a, b, out), ShapeError);
}
