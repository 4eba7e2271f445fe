#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace clinnum {

// Deterministic PRNG with hand-rolled distributions. std::uniform_*_distribution
// and std::shuffle are implementation-defined, so everything that must reproduce
// bit-exactly across builds goes through this class instead.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed)) {
        // Decorrelate nearby seeds.
        next_u64();
        next_u64();
    }

    // Derive an independent stream from (seed, stream). Used to make per-note /
    // per-epoch randomness a pure function of its coordinates.
    Rng(uint64_t seed, uint64_t stream) : Rng(mix(seed) ^ mix(stream * 0x9e3779b97f4a7c15ULL + 1)) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). Rejection-free modulo bias is negligible for n << 2^64,
    // but use Lemire reduction anyway to keep draws unbiased.
    uint64_t next_below(uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        return static_cast<uint64_t>(m >> 64);
    }

    int next_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    bool next_bool(double p) { return next_double() < p; }

    // Standard normal via Box-Muller (no cached spare: keeps the stream simple).
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Draw an index according to unnormalized weights.
    size_t next_weighted(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = next_double() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.size() - 1;
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdULL;
        z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ULL;
        return z ^ (z >> 33);
    }

    uint64_t state_;
};

}  // namespace clinnum
