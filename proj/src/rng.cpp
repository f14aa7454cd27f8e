#include "hpt/rng.hpp"

#include <cmath>
#include <numbers>

namespace hpt {

double Rng::normal() {
    // Box-Muller; consumes two uniforms, returns one sample.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t fnv1a64(const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

Tensor2 random_gaussian(Rng& rng, int rows, int cols, double stddev) {
    Tensor2 t(rows, cols);
    for (double& v : t.data) v = stddev * rng.normal();
    return t;
}

}  // namespace hpt
