#ifndef XAVG_RNG_HPP
#define XAVG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace xavg {

/// SplitMix64 generator. Every shuffle, draw, and initialization in the
/// toolkit goes through this generator so that runs are bitwise
/// reproducible across platforms (std::mt19937 distributions are not
/// pinned by the standard).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

    /// Uniform in (0, 1]: 53 mantissa bits, never exactly zero so it is
    /// safe under a logarithm.
    double next_double() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double next_uniform(double lo, double hi) {
        double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }

    /// Standard normal via Box-Muller; the paired draw is cached.
    double next_gaussian() {
        if (spare_) {
            double v = *spare_;
            spare_.reset();
            return v;
        }
        double u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    std::optional<double> spare_;
};

/// FNV-1a 64-bit hash; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// In-place Fisher-Yates shuffle driven by SplitMix64.
template <typename T>
void fisher_yates_shuffle(std::vector<T>& items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace xavg

#endif  // XAVG_RNG_HPP
