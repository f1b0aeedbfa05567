#include "xfreq/parallel.hpp"

#include <algorithm>
#include <thread>

#ifdef XFREQ_HAVE_OPENMP
#include <omp.h>
#endif

namespace xfreq {

void set_thread_count(int n) {
  if (n < 1) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
#ifdef XFREQ_HAVE_OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int thread_count() {
#ifdef XFREQ_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace xfreq
