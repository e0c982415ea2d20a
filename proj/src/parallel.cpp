#include "tinyode/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace tinyode {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int threads) { g_threads.store(threads < 1 ? 1 : threads); }

int thread_count() { return g_threads.load(); }

int thread_count_from_env(int fallback) {
  const char* env = std::getenv("TINYODE_THREADS");
  if (env == nullptr || *env == '\0') return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(env, &used);
    if (used != std::string(env).size() || v < 1) return fallback;
    return v;
  } catch (const std::exception&) {
    return fallback;
  }
}

}  // namespace tinyode
