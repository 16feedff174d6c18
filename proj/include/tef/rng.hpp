#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tef {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_bytes(std::string_view s, std::uint64_t seed = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x51'7c'c1'b7'27'22'0a'95ULL);
    for (unsigned char c : s) h = splitmix64(h ^ c);
    return h;
}

/// Seeded RNG with explicitly specified sampling, so identical seeds give
/// identical draws on every platform. (std::mt19937_64 output is pinned by
/// the standard; the standard *distributions* are not, hence the hand-rolled
/// helpers.)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

    std::uint64_t next() { return eng_(); }

    /// Uniform in [0, n). Rejection sampling to avoid modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = eng_();
        } while (r >= limit);
        return r % n;
    }

    /// Uniform double in [0, 1).
    double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<std::size_t>(below(v.size()))];
    }

    /// Independent child stream; `tag` separates sibling streams.
    Rng child(std::uint64_t tag) {
        return Rng(splitmix64(eng_() ^ splitmix64(tag)));
    }

private:
    std::mt19937_64 eng_;
};

/// Stable per-item seed derivation (e.g. one RNG per question id).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t item) {
    return splitmix64(splitmix64(base) ^ splitmix64(item + 0x6a09e667f3bcc909ULL));
}

}  // namespace tef
