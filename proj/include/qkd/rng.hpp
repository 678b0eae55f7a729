#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

// Portable random streams. std:: distributions are implementation-defined,
// so every variate used for reproducible output is drawn here.
namespace qkd::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash2(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

constexpr std::uint64_t hash3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return hash2(hash2(a, b), c);
}

// 53-bit uniform in [0, 1)
constexpr double to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

// Random access stream: word(i) depends only on (key, i).
class CounterStream {
public:
    explicit constexpr CounterStream(std::uint64_t key) : key_(splitmix64(key)) {}
    constexpr std::uint64_t word(std::uint64_t i) const { return hash2(key_, i); }
    constexpr double unit(std::uint64_t i) const { return to_unit(word(i)); }

private:
    std::uint64_t key_;
};

// xoshiro256** seeded through splitmix64
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            w = splitmix64(x);
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() { return next(); }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    double uniform() { return to_unit(next()); }

    // (0, 1], safe for log()
    double uniform_pos() { return 1.0 - uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double mean) { return -mean * std::log(uniform_pos()); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // unbiased integer in [0, n) by rejection
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do x = next();
        while (x >= limit);
        return x % n;
    }

    // number of failures before the first success, p = success probability
    std::uint64_t geometric_log(double log_q) {
        // log_q = log(1 - p) < 0
        double g = std::floor(std::log(uniform_pos()) / log_q);
        return g >= 9.0e18 ? ~std::uint64_t{0} : static_cast<std::uint64_t>(g);
    }

    std::uint64_t binomial(std::uint64_t n, double p) {
        if (p <= 0.0 || n == 0) return 0;
        if (p >= 1.0) return n;
        if (n < 64) {
            std::uint64_t k = 0;
            for (std::uint64_t i = 0; i < n; ++i) k += uniform() < p;
            return k;
        }
        // waiting-time method
        double log_q = std::log1p(-p);
        std::uint64_t k = 0, pos = 0;
        for (;;) {
            std::uint64_t gap = geometric_log(log_q);
            if (gap >= n - pos) break;
            pos += gap + 1;
            ++k;
            if (pos >= n) break;
        }
        return k;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <class It>
void shuffle(It first, It last, Xoshiro256& g) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        std::uint64_t j = g.below(i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

}  // namespace qkd::rng
