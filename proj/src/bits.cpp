#include "qkd/bits.hpp"

#include <bit>

#include "qkd/rng.hpp"

namespace qkd {

void BitString::push_back(bool v) {
    if ((size_ & 63) == 0) words_.push_back(0);
    ++size_;
    set(size_ - 1, v);
}

std::uint64_t BitString::extract(std::size_t pos) const {
    if (pos >= size_) return 0;
    std::size_t q = pos >> 6, r = pos & 63;
    std::uint64_t w = words_[q] >> r;
    if (r != 0 && q + 1 < words_.size()) w |= words_[q + 1] << (64 - r);
    std::size_t left = size_ - pos;
    if (left < 64) w &= (std::uint64_t{1} << left) - 1;
    return w;
}

std::size_t BitString::popcount() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

std::size_t BitString::hamming(const BitString& other) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size() && i < other.words_.size(); ++i)
        n += static_cast<std::size_t>(std::popcount(words_[i] ^ other.words_[i]));
    return n;
}

BitString BitString::reversed() const {
    BitString r(size_);
    for (std::size_t i = 0; i < size_; ++i)
        if (get(i)) r.set(size_ - 1 - i, true);
    return r;
}

bool BitString::dot_at(const BitString& other, std::size_t offset) const {
    std::uint64_t acc = 0;
    const auto& ow = other.words();
    for (std::size_t w = 0; w < ow.size(); ++w) acc ^= extract(offset + 64 * w) & ow[w];
    return std::popcount(acc) & 1;
}

std::vector<std::uint8_t> BitString::to_bytes() const {
    std::vector<std::uint8_t> out((size_ + 7) / 8, 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(words_[i / 8] >> (8 * (i % 8)));
    return out;
}

BitString stream_bits(std::uint64_t seed, std::size_t n) {
    BitString b(n);
    rng::CounterStream s(seed);
    std::size_t words = (n + 63) / 64;
    for (std::size_t w = 0; w < words; ++w) {
        std::uint64_t v = s.word(w);
        for (std::size_t k = 0; k < 64 && 64 * w + k < n; ++k)
            if ((v >> k) & 1u) b.set(64 * w + k, true);
    }
    return b;
}

}  // namespace qkd
