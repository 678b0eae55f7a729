#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace qkd {

// Packed bit sequence, bit i lives in word i / 64 at position i % 64.
class BitString {
public:
    BitString() = default;
    explicit BitString(std::size_t n) : words_((n + 63) / 64, 0), size_(n) {}

    std::size_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    bool get(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
    void set(std::size_t i, bool v) {
        std::uint64_t m = std::uint64_t{1} << (i & 63);
        if (v)
            words_[i >> 6] |= m;
        else
            words_[i >> 6] &= ~m;
    }
    void flip(std::size_t i) { words_[i >> 6] ^= std::uint64_t{1} << (i & 63); }
    void push_back(bool v);

    const std::vector<std::uint64_t>& words() const { return words_; }

    // 64 bits starting at pos, zero past the end
    std::uint64_t extract(std::size_t pos) const;

    std::size_t popcount() const;
    bool parity() const { return popcount() & 1u; }
    std::size_t hamming(const BitString& other) const;
    BitString reversed() const;

    // parity of (this[offset, offset + other.size()) AND other)
    bool dot_at(const BitString& other, std::size_t offset) const;

    // least significant bit first within each byte
    std::vector<std::uint8_t> to_bytes() const;

    bool operator==(const BitString& o) const { return size_ == o.size_ && words_ == o.words_; }

private:
    std::vector<std::uint64_t> words_;
    std::size_t size_ = 0;
};

// First n bits of the counter stream keyed by seed.
BitString stream_bits(std::uint64_t seed, std::size_t n);

}  // namespace qkd
