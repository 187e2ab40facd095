#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace ovseg {

// Seeded generator whose draws are identical across standard libraries
// (std distributions are implementation-defined; the engine is not).
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    // [0, n)
    uint64_t below(uint64_t n) { return n == 0 ? 0 : eng_() % n; }
    uint64_t next() { return eng_(); }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ovseg
