#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace stepshift::detail {

inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) {
        return requested;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs fn(chunk_index, begin, end) once for every fixed-size chunk of
/// [0, total). The chunk partition depends only on chunk_size, never on the
/// worker count, so callers that keep per-chunk partial results and reduce
/// them in chunk order get bit-identical output for any degree of
/// parallelism.
template <typename Fn>
void for_each_chunk(std::size_t total, std::size_t chunk_size, unsigned threads, Fn&& fn) {
    if (total == 0) {
        return;
    }
    const std::size_t chunk_count = (total + chunk_size - 1) / chunk_size;
    const auto run_chunk = [&](std::size_t c) {
        const std::size_t begin = c * chunk_size;
        const std::size_t end = std::min(begin + chunk_size, total);
        fn(c, begin, end);
    };

    const unsigned workers =
        static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), chunk_count));
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunk_count; ++c) {
            run_chunk(c);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const auto worker = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1, std::memory_order_relaxed);
            if (c >= chunk_count) {
                return;
            }
            try {
                run_chunk(c);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned t = 1; t < workers; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace stepshift::detail
