#pragma once

#include <cstdint>
#include <exception>
#include <vector>

namespace navwam {

// Slot-indexed parallel loop: workers write only their own index, exceptions
// are captured per slot and rethrown in index order, so results and error
// behavior never depend on the worker count.
template <typename Fn>
void parallel_for_indexed(std::size_t n, const Fn& fn) {
  std::vector<std::exception_ptr> errs(n);
  const std::int64_t count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errs[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const std::exception_ptr& e : errs) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace navwam
