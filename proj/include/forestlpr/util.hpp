#ifndef FORESTLPR_UTIL_HPP
#define FORESTLPR_UTIL_HPP

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "forestlpr/error.hpp"

namespace forestlpr {

// Runs f(i) for i in [0, count) on `jobs` workers. Work items are independent
// and indexed, so results land in pre-sized slots and the outcome does not
// depend on the worker count. The first exception is rethrown on the caller.
inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& f) {
  if (jobs < 1) throw ConfigError("parallel_for: jobs must be >= 1");
  if (jobs == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  const int n_workers = static_cast<int>(std::min<std::size_t>(count, jobs));
  workers.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(count);
          return;
        }
      }
    });
  }
  for (std::thread& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

// Writes through a sibling temp file and renames into place, so readers never
// observe a partially written file.
inline void atomic_write(const std::string& path,
                         const std::function<void(const std::string&)>& writer) {
  const std::string tmp = path + ".tmp";
  writer(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(path + ": rename failed: " + ec.message());
  }
}

}  // namespace forestlpr

#endif
