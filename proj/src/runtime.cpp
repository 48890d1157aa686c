// SPDX-License-Identifier: Apache-2.0
#include "carseg/runtime.hpp"

#include <malloc.h>

#ifdef _OPENMP
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace carseg {

void set_workers(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
__attribute__((constructor)) void runtime_init() {
  // activation tensors are tens of MB and short-lived; keep them on the heap
  // free list instead of mmap/munmap round trips
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#ifdef _OPENMP
  // the conv/norm loops parallelize over the batch; BLAS stays single-threaded
  // inside them
  openblas_set_num_threads(1);
#endif
}
}  // namespace

}  // namespace carseg
