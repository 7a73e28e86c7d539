#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace graphfm {

// splitmix64; used to derive independent seeds for (seed, stream) pairs so that
// e.g. the split shuffle and the epoch-3 batch shuffle never share a stream.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return mix64(base + 0x9e3779b97f4a7c15ULL * (stream + 1));
}

// mt19937_64 with hand-rolled distributions. std::normal_distribution and
// std::uniform_* are implementation-defined, which would break cross-platform
// reproducibility of seeded runs; these are not.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; one value per call, deterministic draw order.
    double normal(double mean, double stddev) {
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), safe at u1=0
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    // [0, n); n must be > 0. Modulo bias is irrelevant at our n (< 2^32).
    uint64_t bounded(uint64_t n) { return gen_() % n; }

  private:
    std::mt19937_64 gen_;
};

// Fisher-Yates with our own draw so the permutation is identical on every
// platform (std::shuffle is not specified that tightly).
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.bounded(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace graphfm
