#include "terracer/threading.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace terracer {

namespace {
int g_cap = 0;
}

void set_thread_cap(int n) {
  g_cap = n > 0 ? n : 0;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

int thread_cap() { return g_cap; }

void apply_thread_cap_from_env(int cli_threads) {
  int n = cli_threads;
  if (n <= 0) {
    if (const char* env = std::getenv("TERRACER_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (...) {
        n = 0;
      }
    }
  }
  if (n > 0) set_thread_cap(n);
}

}  // namespace terracer
