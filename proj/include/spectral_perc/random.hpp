#pragma once

#include <bit>
#include <cstdint>
#include <random>

namespace spectral_perc {

// SplitMix64 finalizer. Used to decorrelate derived seeds and to expand a
// seed into generator state.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256** (Blackman and Vigna). One generator is seeded per replica,
/// so seeding has to be cheap; mt19937_64 spends longer seeding than a
/// small replica takes to simulate.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(std::uint64_t seed = 1) noexcept { this->seed(seed); }

    void seed(std::uint64_t seed) noexcept
    {
        for (auto& w : s_) {
            seed += 0x9e3779b97f4a7c15ULL;
            w = mix64(seed);
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept
    {
        const std::uint64_t out = std::rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = std::rotl(s_[3], 45);
        return out;
    }

private:
    std::uint64_t s_[4];
};

using Rng = Xoshiro256;

// Counter-based seed for replica `index` of the stream `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept
{
    return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

// Seed for a named sub-stream (e.g. the second configuration of a coupled pair).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                    std::uint64_t stream) noexcept
{
    return derive_seed(derive_seed(master, index), stream);
}

inline Rng replica_rng(std::uint64_t master, std::uint64_t index)
{
    return Rng(derive_seed(master, index));
}

inline bool fair_coin(Rng& rng) { return (rng() >> 63) != 0; }

inline double uniform01(Rng& rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline bool bernoulli(Rng& rng, double p)
{
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform01(rng) < p;
}

/// Hands out fair bits 64 at a time.
class BitStream {
public:
    explicit BitStream(Rng& rng) : rng_(&rng) {}

    bool next()
    {
        if (left_ == 0) {
            word_ = (*rng_)();
            left_ = 64;
        }
        const bool b = (word_ & 1U) != 0;
        word_ >>= 1;
        --left_;
        return b;
    }

private:
    Rng* rng_;
    std::uint64_t word_ = 0;
    int left_ = 0;
};

} // namespace spectral_perc
