#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <type_traits>
#include <vector>

namespace fbd {

inline std::int64_t chunk_count(std::int64_t n, int threads) {
  return std::max<std::int64_t>(1, std::min<std::int64_t>(std::max(1, threads), n));
}

// Runs fn(begin, end), or fn(chunk, begin, end), over chunk_count(n, threads)
// contiguous chunks of [0, n). Chunk boundaries depend only on n and threads,
// so per-chunk reductions combined in chunk order are deterministic.
template <typename Fn>
void parallel_chunks(std::int64_t n, int threads, Fn&& fn) {
  auto call = [&](std::int64_t k, std::int64_t b, std::int64_t e) {
    if constexpr (std::is_invocable_v<Fn&, std::int64_t, std::int64_t, std::int64_t>) {
      fn(k, b, e);
    } else {
      fn(b, e);
    }
  };
  if (n <= 0) return;
  const std::int64_t t = chunk_count(n, threads);
  if (t == 1) {
    call(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(t));
  for (std::int64_t k = 0; k < t; ++k) {
    const std::int64_t b = n * k / t, e = n * (k + 1) / t;
    pool.emplace_back([&, k, b, e] {
      try {
        call(k, b, e);
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace fbd
