#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qbsde {

/// Worker count: QBSDE_THREADS if set (>= 1), else hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("QBSDE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

/// Runs fn(begin, end) over fixed-size chunks of [0, n).
///
/// Chunk boundaries depend only on n and chunk_size, never on the worker
/// count, so any per-chunk output combined in chunk order is identical under
/// 1, 2, or 8 threads. fn must write only to disjoint, per-index or
/// per-chunk state.
inline void parallel_for_chunks(std::size_t n, std::size_t chunk_size,
                                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = 1;
    const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
    const unsigned workers = std::min<std::size_t>(thread_count(), n_chunks);

    if (workers <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t b = c * chunk_size;
            fn(c, b, std::min(n, b + chunk_size));
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (;;) {
                    const std::size_t c = next.fetch_add(1);
                    if (c >= n_chunks) break;
                    const std::size_t b = c * chunk_size;
                    fn(c, b, std::min(n, b + chunk_size));
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Deterministic parallel sum of fn(i) over [0, n): per-chunk partials are
/// accumulated in index order inside each chunk and combined in chunk order.
inline double parallel_sum(std::size_t n, const std::function<double(std::size_t)>& fn,
                           std::size_t chunk_size = 4096) {
    if (n == 0) return 0.0;
    const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
    std::vector<double> partial(n_chunks, 0.0);
    parallel_for_chunks(n, chunk_size, [&](std::size_t c, std::size_t b, std::size_t e) {
        double s = 0.0;
        for (std::size_t i = b; i < e; ++i) s += fn(i);
        partial[c] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace qbsde
