#pragma once

// Bounded worker pool for independent jobs (parameter sweeps, per-eigenstate
// replays). Each job owns its state; callers store results by index, so the
// merged output is deterministic regardless of the worker count.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qpiston {

// Worker count from QPISTON_THREADS, defaulting to the hardware concurrency.
inline int worker_count() {
    if (const char* env = std::getenv("QPISTON_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1)
            return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

template <class Fn> void parallel_for(int jobs, Fn&& fn) {
    if (jobs <= 0)
        return;
    const int workers = std::min(worker_count(), jobs);
    if (workers <= 1) {
        for (int i = 0; i < jobs; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= jobs)
                    return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace qpiston
