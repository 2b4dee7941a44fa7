#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace contamlab {

// Deterministic RNG with portable draw semantics. std::mt19937_64 provides the
// raw stream; uniform/normal transforms are hand-rolled so results do not
// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0.
    uint64_t uniform_index(uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (one value per call; the pair's second
    // value is cached).
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, std) truncated to +/- 2 std, BERT-style init.
    double truncated_normal(double stddev) {
        double x;
        do {
            x = normal();
        } while (std::abs(x) > 2.0);
        return x * stddev;
    }

    // Derive an independent stream for a named sub-purpose.
    Rng fork(uint64_t stream_id) {
        uint64_t s = engine_() ^ (0x9e3779b97f4a7c15ull * (stream_id + 1));
        return Rng(s);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace contamlab
