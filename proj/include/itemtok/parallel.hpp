#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include <omp.h>

namespace itemtok {

/// Execution policy for the data-parallel loops. kSerial is the reference
/// path; kParallel must produce bitwise-identical results.
enum class Exec { kSerial, kParallel };

inline Exec default_exec() { return omp_get_max_threads() > 1 ? Exec::kParallel : Exec::kSerial; }

/// Calls fn(i) for every i in [0, n). Each index writes only its own output
/// slot, so results never depend on scheduling. The first exception thrown by
/// any iteration is rethrown on the calling thread.
template <typename Fn>
void parallel_for(Exec exec, std::size_t n, Fn&& fn) {
  if (exec == Exec::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace itemtok
