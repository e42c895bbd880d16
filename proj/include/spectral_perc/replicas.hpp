#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "random.hpp"

namespace spectral_perc {

inline constexpr const char* kWorkersEnv = "SPECTRAL_PERC_WORKERS";

/// Worker count from SPECTRAL_PERC_WORKERS, defaulting to 1.
inline unsigned worker_count()
{
    if (const char* env = std::getenv(kWorkersEnv)) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(std::min<long>(v, 256));
        } catch (...) {
        }
    }
    return 1;
}

// Replicas are grouped into fixed-size chunks; each chunk owns an
// accumulator and chunks are merged in index order, so the result does not
// depend on how many workers processed them.
inline constexpr std::uint64_t kChunkSize = 1024;

/// Runs `body(acc, state, rng, replica_index)` for replica_index in [0, n).
/// `rng` is seeded from (seed, replica_index); `state` is per-worker scratch
/// produced by `make_state()`. Returns the merged accumulator.
template <class Acc, class MakeState, class Body>
Acc run_replicas_with(std::uint64_t n, std::uint64_t seed, MakeState&& make_state,
                      Body&& body, unsigned workers = 0)
{
    if (workers == 0) workers = worker_count();
    const std::uint64_t chunks = (n + kChunkSize - 1) / kChunkSize;
    std::vector<Acc> partial(chunks);

    auto run_chunk = [&](auto& state, std::uint64_t c) {
        const std::uint64_t lo = c * kChunkSize;
        const std::uint64_t hi = std::min(n, lo + kChunkSize);
        Acc& acc = partial[c];
        for (std::uint64_t i = lo; i < hi; ++i) {
            Rng rng = replica_rng(seed, i);
            body(acc, state, rng, i);
        }
    };

    if (workers <= 1 || chunks <= 1) {
        auto state = make_state();
        for (std::uint64_t c = 0; c < chunks; ++c) run_chunk(state, c);
    } else {
        std::atomic<std::uint64_t> next{0};
        std::vector<std::thread> pool;
        const unsigned used = static_cast<unsigned>(std::min<std::uint64_t>(workers, chunks));
        pool.reserve(used);
        for (unsigned w = 0; w < used; ++w) {
            pool.emplace_back([&] {
                auto state = make_state();
                for (std::uint64_t c = next++; c < chunks; c = next++) run_chunk(state, c);
            });
        }
        for (auto& t : pool) t.join();
    }

    Acc total{};
    for (const auto& p : partial) total.merge(p);
    return total;
}

/// Stateless form: `body(acc, rng, replica_index)`.
template <class Acc, class Body>
Acc run_replicas(std::uint64_t n, std::uint64_t seed, Body&& body, unsigned workers = 0)
{
    return run_replicas_with<Acc>(
        n, seed, [] { return 0; },
        [&](Acc& acc, int&, Rng& rng, std::uint64_t i) { body(acc, rng, i); }, workers);
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}

    std::int64_t elapsed_ms() const
    {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

} // namespace spectral_perc
