#ifndef CHARDIFF_RNG_HPP
#define CHARDIFF_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace chardiff {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and up to three tags.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = splitmix64(base ^ splitmix64(a));
    s = splitmix64(s ^ splitmix64(b + 0x51ed270b7a1fca5dULL));
    return splitmix64(s ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
}

// mt19937_64 with explicit helpers. Gaussians use Box-Muller on raw
// uniforms (no hidden distribution state), so the full RNG state is the
// engine state and round-trips through text serialization.
class Rng {
public:
    Rng() : eng_(0) {}
    explicit Rng(uint64_t seed) : eng_(seed) {}

    double uniform() {  // [0, 1)
        return (eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) {  // [0, n)
        return static_cast<int>(eng_() % static_cast<uint64_t>(n));
    }

    double gaussian() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    Rng split(uint64_t tag) { return Rng(splitmix64(eng_() ^ splitmix64(tag))); }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace chardiff

#endif
