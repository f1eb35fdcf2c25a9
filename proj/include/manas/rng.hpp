// SPDX-License-Identifier: Apache-2.0
//
// Seeded RNG with portable distribution mappings. Standard-library
// distributions are implementation-defined, so uniform/normal draws are
// built directly on the mt19937_64 output stream to keep runs
// reproducible across toolchains.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace manas {

// splitmix64 finalizer, used to derive independent sub-seeds.
inline std::uint64_t hash_mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t salt) {
    return hash_mix(seed ^ (0x9e3779b97f4a7c15ULL + (salt << 6) + (salt >> 2)));
}

// String salts (e.g. schedule tags) get FNV-1a folded into the same mix.
inline std::uint64_t hash_combine(std::uint64_t seed, const std::string& salt) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : salt) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return hash_combine(seed, h);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : tag_(seed), eng_(hash_mix(seed)) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without the cached spare, so every draw consumes exactly
    // two engine words.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        return static_cast<int>(uniform() * static_cast<double>(n)) % n;
    }

    bool coin() { return (eng_() & 1ULL) != 0; }

    Rng derive(std::uint64_t salt) const {
        // Peek-free derivation: children depend only on the parent seed tag.
        return Rng(hash_combine(tag_, salt));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << tag_ << " " << eng_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> tag_ >> eng_;
        if (!is) throw std::invalid_argument("Rng::deserialize: bad state string");
    }

private:
    std::uint64_t tag_ = 0;
    std::mt19937_64 eng_;
};

}  // namespace manas
