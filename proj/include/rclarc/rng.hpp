#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace rclarc {

// SplitMix64 generator. The stream is fully specified so that datasets and
// initializations can be reproduced bit-for-bit by other implementations:
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// uniform() = (next_u64() >> 11) * 2^-53, in [0, 1).
// normal() draws u1 = 1 - uniform(), u2 = uniform() and returns
// sqrt(-2 ln u1) * cos(2 pi u2) (Box-Muller, cosine branch only; the sine
// branch is discarded so every normal consumes exactly two words).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // Uniform integer in [0, n), n > 0. Uses rejection to avoid modulo bias.
    std::uint64_t below(std::uint64_t n);

    // In-place Fisher-Yates shuffle: for i = n-1 down to 1, swap(i, below(i+1)).
    template <typename T>
    void shuffle(std::vector<T>& values) {
        if (values.size() < 2) return;
        for (std::size_t i = values.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(values[i], values[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Derives an independent child seed; used to give each generator stage its own stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rclarc
