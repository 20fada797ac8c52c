#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace memsig {

// Deterministic RNG. All sampling transforms are hand-rolled on top of the
// raw mt19937_64 stream so that a given seed produces the same values on
// every platform (std::*_distribution output is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Modulo bias is negligible for n << 2^64 and irrelevant here; we
        // only need determinism, not exact uniformity.
        return gen_() % n;
    }

    // Standard normal via Box-Muller (deterministic two-draw transform).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g. one per epoch or per probe job).
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = gen_();
        return Rng(s ^ (salt * 0x9e3779b97f4a7c15ull));
    }

private:
    std::mt19937_64 gen_;
};

// FNV-1a over raw bytes; used for corpus ids, input hashes and the
// frozen-model parameter hash.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace memsig
