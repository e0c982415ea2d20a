#pragma once

#include <cstddef>

namespace tinyode {

// Worker count for per-output-channel loops. Work is split statically and
// every output element is reduced by exactly one thread in a fixed order,
// so the thread count never changes a result.
void set_thread_count(int threads);
int thread_count();

// Reads TINYODE_THREADS; returns `fallback` when unset or malformed.
int thread_count_from_env(int fallback);

template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const long long count = static_cast<long long>(n);
  const int threads = thread_count();
  if (threads <= 1 || count <= 1) {
    for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
    return;
  }
#pragma omp parallel for schedule(static) num_threads(threads)
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace tinyode
