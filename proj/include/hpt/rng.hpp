#pragma once

#include <cstdint>

#include "hpt/tensor.hpp"

namespace hpt {

// Minimal splitmix64-based generator. std::*_distribution output is
// implementation-defined, so every draw in the project goes through this to
// keep runs byte-identical across toolchains.
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform index in [0, n)
    int index(int n) { return static_cast<int>(next() % static_cast<uint64_t>(n)); }

    // standard normal via Box-Muller
    double normal();

    // child generator with a decorrelated seed
    Rng fork(uint64_t salt) { return Rng(state ^ (salt * 0x9e3779b97f4a7c15ULL + 0x1234567ULL)); }
};

uint64_t fnv1a64(const void* bytes, size_t n);
uint64_t fnv1a64(const std::string& s);

Tensor2 random_gaussian(Rng& rng, int rows, int cols, double stddev);

}  // namespace hpt
