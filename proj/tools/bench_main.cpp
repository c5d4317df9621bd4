// Timing comparison of the serial reference kernels against the OpenMP
// variants, plus rollout throughput at different worker counts.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "navwam/kernels.hpp"
#include "navwam/model.hpp"
#include "navwam/parallel.hpp"
#include "navwam/rng.hpp"
#include "navwam/simworld.hpp"

using namespace navwam;
using clock_type = std::chrono::steady_clock;

namespace {

double ms_since(clock_type::time_point t0) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (double& v : t.d) v = rng.normal();
  return t;
}

void bench_matmul(std::size_t m, std::size_t k, std::size_t n, int reps) {
  Rng rng(7);
  const Tensor a = random_tensor(rng, m, k);
  const Tensor b = random_tensor(rng, k, n);
  Tensor out;
  auto t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) kernels::matmul_serial(a, b, out);
  const double serial_ms = ms_since(t0) / reps;
  t0 = clock_type::now();
  for (int i = 0; i < reps; ++i) kernels::matmul_omp(a, b, out);
  const double omp_ms = ms_since(t0) / reps;
  std::printf("matmul %4zux%-4zu * %4zux%-4zu  serial %8.3f ms  omp %8.3f ms  speedup %.2fx\n",
              m, k, k, n, serial_ms, omp_ms, serial_ms / omp_ms);
}

void bench_rollouts(int episodes) {
  RunConfig cfg;
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  ParameterStore store;
  init_params(store, mc, 11);
  std::vector<Demo> demos;
  for (int i = 0; i < episodes; ++i) {
    demos.push_back(generate_episode(static_cast<TaskFamily>(i % kNumFamilies),
                                     static_cast<std::uint64_t>(40000 + i),
                                     Difficulty::Medium, sim));
  }
  for (int workers : {1, 0}) {
#ifdef _OPENMP
    if (workers > 0) omp_set_num_threads(workers);
    else omp_set_num_threads(omp_get_num_procs());
#endif
    kernels::set_parallel_enabled(workers != 1);
    const auto t0 = clock_type::now();
    std::vector<int> wins(demos.size(), 0);
    parallel_for_indexed(demos.size(), [&](std::size_t i) {
      const RolloutResult rr =
          roll_episode(store, mc, sim, demos[i], RolloutMode::ClosedLoop, false, nullptr);
      wins[i] = rr.success ? 1 : 0;
    });
    const double ms = ms_since(t0);
    std::printf("rollouts x%-3d  workers %-8s  %8.1f ms  %6.2f ms/episode\n", episodes,
                workers == 1 ? "1" : "hardware", ms, ms / episodes);
  }
}

}  // namespace

int main() {
  std::printf("kernel and rollout benchmark (release build recommended)\n");
  bench_matmul(26, 64, 64, 2000);
  bench_matmul(128, 128, 128, 200);
  bench_matmul(256, 256, 256, 30);
  bench_rollouts(16);
  return 0;
}
