#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace dbvae {

// Stateless 64-bit mixer used to derive independent substreams from a master
// seed. Substream derivation keeps parallel and serial generation identical:
// worker i always sees derive(seed, i) regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. Wraps mt19937_64 (whose output sequence is fixed by the
// standard) and maps to doubles by hand, since the std distributions are
// implementation-defined and would break cross-toolchain reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL)));
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; second value cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Unbiased integer in [0, n). n must be > 0. Rejects draws from the
    // final partial block of size 2^64 mod n.
    std::uint64_t index(std::uint64_t n) {
        for (;;) {
            const std::uint64_t x = gen_();
            const std::uint64_t r = x % n;
            if (x - r <= std::numeric_limits<std::uint64_t>::max() - (n - 1)) return r;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dbvae
