#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mldd::kernels {

enum class Mode { Serial, Parallel };

// Global kernel execution mode. Parallel by default when built with OpenMP.
// Both modes produce bitwise-identical results: every output element is an
// independent gather with a fixed accumulation order.
Mode mode();
void set_mode(Mode m);

int max_threads();

template <class F>
inline void parallel_for(std::int64_t n, F&& body) {
#ifdef _OPENMP
  if (mode() == Mode::Parallel && n > 1) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      body(i);
    }
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    body(i);
  }
}

}  // namespace mldd::kernels
