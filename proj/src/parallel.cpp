#include "cme/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cme {

namespace {
std::atomic<int> g_threads{0};
thread_local bool t_inside = false;
}

int default_threads() {
  const int t = g_threads.load();
  if (t > 0) return t;
  return std::max(1u, std::thread::hardware_concurrency());
}

void set_default_threads(int threads) { g_threads.store(threads); }

void parallel_for(int n, const std::function<void(int)>& fn, int threads) {
  if (n <= 0) return;
  if (threads <= 0) threads = default_threads();
  threads = std::min(threads, n);
  if (threads <= 1 || t_inside) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    const bool was_inside = t_inside;
    t_inside = true;
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) {
        t_inside = was_inside;
        return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

SerialScope::SerialScope() : previous_(t_inside) { t_inside = true; }
SerialScope::~SerialScope() { t_inside = previous_; }

}  // namespace cme
