#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "bitraj/digest.hpp"

namespace bitraj {

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distributions below are hand-rolled because std::*_distribution is
// implementation-defined and would break frozen golden values.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Stable named substream: fork(seed, "epoch", 3) always yields the same
    // stream, independent of draw order elsewhere.
    static Rng fork(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
        Fnv1a h;
        h.update(&seed, sizeof(seed));
        h.update(tag);
        h.update(&index, sizeof(index));
        return Rng(h.value());
    }

    std::uint64_t next_u64() { return eng_(); }

    // Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        std::uint64_t x, r;
        do {
            x = eng_();
            r = x % bound;
        } while (x - r > ~0ULL - (bound - 1));
        return r;
    }

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; } // [0,1)

    double normal() { // Box-Muller, pair cached
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; // (0,1)
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace bitraj
