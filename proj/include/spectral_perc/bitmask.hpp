#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace spectral_perc {

/// Dynamic set of bit ids over a fixed universe [0, size).
class BitMask {
public:
    BitMask() = default;
    explicit BitMask(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

    BitMask(std::size_t size, std::initializer_list<std::size_t> ids) : BitMask(size)
    {
        for (auto i : ids) set(i);
    }

    static BitMask full(std::size_t size)
    {
        BitMask m(size);
        for (std::size_t i = 0; i < size; ++i) m.set(i);
        return m;
    }

    static BitMask from_u64(std::size_t size, std::uint64_t mask)
    {
        if (size < 64 && (mask >> size) != 0)
            throw std::invalid_argument("BitMask::from_u64: mask exceeds universe");
        BitMask m(size);
        if (!m.words_.empty()) m.words_[0] = mask;
        return m;
    }

    std::size_t size() const noexcept { return size_; }

    bool test(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1U; }
    bool operator[](std::size_t i) const noexcept { return test(i); }

    void set(std::size_t i, bool v = true)
    {
        if (i >= size_) throw std::out_of_range("BitMask::set: id outside universe");
        const std::uint64_t bit = std::uint64_t{1} << (i & 63);
        if (v)
            words_[i >> 6] |= bit;
        else
            words_[i >> 6] &= ~bit;
    }

    std::size_t count() const noexcept
    {
        std::size_t c = 0;
        for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
        return c;
    }

    bool empty() const noexcept
    {
        for (auto w : words_)
            if (w) return false;
        return true;
    }

    bool intersects(const BitMask& o) const
    {
        check_same(o);
        for (std::size_t k = 0; k < words_.size(); ++k)
            if (words_[k] & o.words_[k]) return true;
        return false;
    }

    bool subset_of(const BitMask& o) const
    {
        check_same(o);
        for (std::size_t k = 0; k < words_.size(); ++k)
            if (words_[k] & ~o.words_[k]) return false;
        return true;
    }

    BitMask complement() const
    {
        BitMask m(size_);
        for (std::size_t k = 0; k < words_.size(); ++k) m.words_[k] = ~words_[k];
        m.trim();
        return m;
    }

    BitMask& operator|=(const BitMask& o)
    {
        check_same(o);
        for (std::size_t k = 0; k < words_.size(); ++k) words_[k] |= o.words_[k];
        return *this;
    }

    BitMask& operator&=(const BitMask& o)
    {
        check_same(o);
        for (std::size_t k = 0; k < words_.size(); ++k) words_[k] &= o.words_[k];
        return *this;
    }

    friend BitMask operator|(BitMask a, const BitMask& b) { return a |= b; }
    friend BitMask operator&(BitMask a, const BitMask& b) { return a &= b; }
    friend bool operator==(const BitMask&, const BitMask&) = default;

    /// Low 64 bits; meaningful only for universes of at most 64 bits.
    std::uint64_t to_u64() const noexcept { return words_.empty() ? 0 : words_[0]; }

    std::vector<std::size_t> ids() const
    {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < words_.size(); ++k) {
            std::uint64_t w = words_[k];
            while (w) {
                out.push_back(k * 64 + static_cast<std::size_t>(std::countr_zero(w)));
                w &= w - 1;
            }
        }
        return out;
    }

private:
    void check_same(const BitMask& o) const
    {
        if (o.size_ != size_) throw std::invalid_argument("BitMask: universe size mismatch");
    }

    void trim()
    {
        if (size_ % 64 && !words_.empty()) words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
    }

    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

} // namespace spectral_perc
