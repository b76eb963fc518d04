#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mpvoc {

// Worker cap from MPVOC_THREADS; 0 or unset means single-threaded deterministic mode.
inline int64_t worker_threads() {
    const char* env = std::getenv("MPVOC_THREADS");
    if (!env || !*env) return 0;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || v < 0) return 0;
    return static_cast<int64_t>(v);
}

// Runs fn(i) for i in [0, n). With more than one worker the schedule is
// dynamic, so fn must write results into per-index slots; aggregation done by
// the caller in index order stays deterministic either way.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn, int64_t max_workers = -1) {
    if (n <= 0) return;
    int64_t workers = max_workers < 0 ? worker_threads() : std::min(worker_threads(), max_workers);
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mutex;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int64_t w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mpvoc
