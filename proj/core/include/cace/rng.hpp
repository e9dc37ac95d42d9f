#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "cace/tensor.hpp"

namespace cace {

// All randomness in the project flows from one top-level seed through named
// sub-seeds, so components stay reproducible independently of each other.
inline uint64_t derive_seed(uint64_t seed, std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ull ^ seed;
    for (char ch : name) {
        h ^= uint64_t(uint8_t(ch));
        h *= 0x100000001b3ull;
    }
    // splitmix64 finalizer
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}
    Rng(uint64_t seed, std::string_view name) : engine_(derive_seed(seed, name)) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    long uniform_int(long lo, long hi) {  // inclusive bounds
        return std::uniform_int_distribution<long>(lo, hi)(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

    Tensor normal_tensor(long n, long c, long h, long w, double stddev,
                         DType dt = DType::f64) {
        Tensor t(n, c, h, w, dt);
        for (long i = 0; i < t.numel(); ++i) t.set(i, normal(0.0, stddev));
        return t;
    }
    Tensor uniform_tensor(long n, long c, long h, long w, double lo, double hi,
                          DType dt = DType::f64) {
        Tensor t(n, c, h, w, dt);
        for (long i = 0; i < t.numel(); ++i) t.set(i, uniform(lo, hi));
        return t;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace cace
