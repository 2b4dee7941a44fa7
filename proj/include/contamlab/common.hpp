#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace contamlab {

// Validation failures (bad config, malformed input files, shape errors).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures (NaN/Inf produced by an op, divergence during training).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a 64-bit, used for config fingerprints and corpus digests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

inline std::string hex_digest(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace contamlab
