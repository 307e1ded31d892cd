#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace driftprobe {

// Deterministic splitmix64 generator. The standard <random> distributions are
// implementation-defined, so every value that must reproduce bit-for-bit
// (fixture activations, bootstrap resamples, dataset splits) is drawn here.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 bits of mantissa.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Modulo bias is ~2^-64 per draw, irrelevant at
    // the sizes used here; what matters is that the stream is reproducible.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; the spare half of each pair is cached.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used to derive per-key seeds from strings.
inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    // boost-style mix, widened to 64 bits
    a ^= b + 0x9e3779b97f4a7c15ULL + (a << 12) + (a >> 4);
    return a;
}

template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
        const size_t j = static_cast<size_t>(rng.next_below(i + 1));
        std::swap(v[i], v[j]);
    }
}

inline std::vector<double> gaussian_vector(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_gaussian();
    return v;
}

} // namespace driftprobe
