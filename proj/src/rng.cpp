#include "dsegnet/rng.hpp"

#include <cmath>
#include <numbers>

namespace dseg {

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    // Rejection sampling over the largest multiple of bound.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % bound;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace dseg
