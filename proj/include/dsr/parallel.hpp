#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dsr {

/// Run fn(i) for i in [0, count) on up to `threads` workers. Work items are pulled
/// dynamically; callers write results to disjoint slots. The first exception is
/// rethrown after all workers stop.
template <class Fn>
void parallel_for(long count, int threads, Fn&& fn)
{
    const long workers = std::clamp<long>(threads, 1, std::max<long>(count, 1));
    if (workers == 1) {
        for (long i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (long w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (long i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace dsr
