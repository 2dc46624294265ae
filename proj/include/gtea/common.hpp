#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gtea {

/// Invalid configuration or CLI usage. Mapped to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data. Mapped to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A non-finite value was produced. Nothing is clamped; the step aborts.
/// Mapped to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shape contract violation (conformance checks name the operation
/// and both shapes).
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent rng streams from a base
// seed plus stream tags so that batch/eval/init draws never alias.
inline std::uint64_t mix_bits(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = mix_bits(base ^ mix_bits(tag));
    s = mix_bits(s ^ mix_bits(a));
    return mix_bits(s ^ mix_bits(b));
}

}  // namespace gtea
