#pragma once

#include <atomic>
#include <exception>
#include <optional>
#include <thread>

namespace sflow {

template <typename T> std::vector<T> parallel_map(std::size_t count, const std::function<T(std::size_t)> &fn) {
  std::vector<std::optional<T>> slots(count);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(count);

  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min<std::size_t>(worker_count(), count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(worker);
    for (auto &th : pool)
      th.join();
  }
  // Rethrow the lowest-index failure so errors do not depend on scheduling.
  for (const auto &f : failures)
    if (f)
      std::rethrow_exception(f);

  std::vector<T> out;
  out.reserve(count);
  for (auto &s : slots)
    out.push_back(std::move(*s));
  return out;
}

} // namespace sflow
