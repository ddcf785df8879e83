/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_PARALLEL_HPP
#define CELLFUSE_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace cellfuse {

/// Items per work chunk. Fixed so chunk identity (and therefore any
/// chunk-indexed partial result) does not depend on the worker count.
inline constexpr std::size_t kParallelChunk = 64;

inline std::size_t num_chunks(std::size_t n) {
    return (n + kParallelChunk - 1) / kParallelChunk;
}

/// Runs fn(chunk_index, begin, end) over [0, n) split into kParallelChunk
/// blocks. Scheduling is dynamic; results must be written per chunk index and
/// combined by the caller in chunk order, which makes every reduction built
/// on this independent of thread count and timing. Exceptions are rethrown;
/// when several chunks throw, the lowest chunk index wins, again for
/// reproducibility.
inline void parallel_for_chunks(
    std::size_t n, int threads,
    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t chunks = num_chunks(n);
    if (chunks == 0) return;
    if (threads < 1) threads = 1;

    if (threads == 1 || chunks == 1) {
        for (std::size_t c = 0; c < chunks; ++c) {
            std::size_t begin = c * kParallelChunk;
            std::size_t end = begin + kParallelChunk < n ? begin + kParallelChunk : n;
            fn(c, begin, end);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(chunks);
    auto worker = [&] {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            std::size_t begin = c * kParallelChunk;
            std::size_t end = begin + kParallelChunk < n ? begin + kParallelChunk : n;
            try {
                fn(c, begin, end);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        }
    };

    std::vector<std::thread> pool;
    std::size_t nworkers = static_cast<std::size_t>(threads) < chunks
                               ? static_cast<std::size_t>(threads)
                               : chunks;
    pool.reserve(nworkers);
    for (std::size_t t = 0; t < nworkers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (std::size_t c = 0; c < chunks; ++c) {
        if (errors[c]) std::rethrow_exception(errors[c]);
    }
}

/// Chunk-ordered sum of fn(i) over [0, n). The combination order is fixed by
/// chunk index, so the floating-point result is bit-identical for any thread
/// count.
inline double parallel_sum(std::size_t n, int threads,
                           const std::function<double(std::size_t)>& fn) {
    std::vector<double> partial(num_chunks(n), 0.0);
    parallel_for_chunks(n, threads,
                        [&](std::size_t c, std::size_t begin, std::size_t end) {
                            double s = 0.0;
                            for (std::size_t i = begin; i < end; ++i) s += fn(i);
                            partial[c] = s;
                        });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace cellfuse

#endif
