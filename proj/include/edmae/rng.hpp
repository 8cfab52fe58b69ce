#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace edmae {

// splitmix64: tiny, fully portable, and good enough for data synthesis,
// masking and weight init at desk scale. Using our own generator (instead of
// std::shuffle / std::normal_distribution, whose outputs are
// implementation-defined) keeps every artifact byte-reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) { return static_cast<float>(uniform(lo, hi)); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = ~0ULL - (~0ULL % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // standard normal via Box-Muller (pinned algorithm, not std::)
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derives a named substream seed from a root seed. All randomness in the CLI
// flows from one root seed through named substreams (data, mask, init,
// shuffle) so experiment arms stay paired across configurations.
inline std::uint64_t substream(std::uint64_t root, std::string_view name) {
    // FNV-1a over the name, then one splitmix round mixed with the root
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    Rng r(root ^ h);
    return r.next_u64();
}

inline std::uint64_t substream(std::uint64_t root, std::string_view name, std::uint64_t index) {
    Rng r(substream(root, name) + 0x9e3779b97f4a7c15ULL * (index + 1));
    return r.next_u64();
}

}  // namespace edmae
