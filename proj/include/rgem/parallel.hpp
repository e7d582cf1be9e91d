// Minimal fork-join helper for splitting a minibatch across worker threads.
#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rgem {

/// Calls f(worker, begin, end) over [0, n) split into chunks.
///
/// Deterministic mode hands worker w the contiguous range
/// [w*n/W, (w+1)*n/W), so each worker's partial results depend only on
/// (n, W). Otherwise workers pull smaller chunks from a shared counter.
/// The first exception thrown by any worker is rethrown after joining.
template <typename F>
void parallel_chunks(std::size_t workers, std::size_t n, bool deterministic, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (n == 0) return;
  if (workers == 1) {
    f(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mu;
  auto guarded = [&](auto&& body) {
    try {
      body();
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers);
  if (deterministic) {
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * n / workers, e = (w + 1) * n / workers;
      threads.emplace_back([&, w, b, e] { guarded([&] { f(w, b, e); }); });
    }
  } else {
    const std::size_t chunk = std::max<std::size_t>(1, n / (4 * workers));
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        guarded([&] {
          for (;;) {
            const std::size_t b = next.fetch_add(chunk);
            if (b >= n) break;
            f(w, b, std::min(n, b + chunk));
          }
        });
      });
    }
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace rgem
