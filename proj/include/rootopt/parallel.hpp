#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rootopt {

/// Runs fn(k) for k in [0, n) on up to `threads` workers. Order of execution is
/// unspecified; the first exception thrown by a worker is rethrown after all join.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, std::size_t(std::max(threads, 1)));
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr failure;
    std::mutex m;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t k = w; k < n; k += workers) fn(k);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(m);
                if (!failure) failure = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace rootopt
