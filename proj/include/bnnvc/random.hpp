#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace bnnvc {

/// SplitMix64 finalizer. Used for seeding and stream derivation only.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Stream identifiers for the top-level consumers of a user seed. Any two
/// consumers that must not share randomness use distinct domains.
enum class StreamDomain : std::uint64_t
{
    generate    = 1,
    balance     = 2,
    split       = 3,
    perturb     = 4,
    init        = 5,
    shuffle     = 6,
    train_noise = 7,
    predict     = 8,
};

/// xoshiro256** generator with an explicit stream-derivation rule.
///
/// Rng(seed, stream) hashes (seed, stream) through SplitMix64 into the 256-bit
/// state, so distinct stream ids give statistically independent sequences and
/// every draw is bit-reproducible across platforms. Normal variates use the
/// Box-Muller transform (two uniforms per pair, second value cached) rather than
/// std::normal_distribution, whose algorithm is implementation-defined.
class Rng
{
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
    {
        std::uint64_t mix = seed;
        const std::uint64_t seed_hash = splitmix64(mix);
        std::uint64_t sm = seed_hash ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL);
        for (auto& word : s_)
            word = splitmix64(sm);
    }

    Rng(std::uint64_t seed, StreamDomain domain) noexcept
        : Rng(seed, static_cast<std::uint64_t>(domain)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return next(); }

    std::uint64_t next() noexcept
    {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Stream `index` within `domain` of a user seed, e.g. the per-example
    /// generator of example i is Rng::stream(seed, StreamDomain::generate, i).
    static Rng stream(std::uint64_t seed, StreamDomain domain, std::uint64_t index) noexcept
    {
        return Rng(Rng(seed, domain).next(), index);
    }

    /// A child seed for sub-stream derivation: Rng(rng.derive_seed(), id).
    std::uint64_t derive_seed() noexcept { return next(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire's nearly-divisionless method.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        if (n <= 1)
            return 0;
        __uint128_t m = static_cast<__uint128_t>(next()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>(next()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// +1 or -1 with equal probability.
    double rademacher() noexcept { return (next() >> 63) ? 1.0 : -1.0; }

    double normal() noexcept
    {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        cached_ = radius * std::sin(angle);
        has_cached_ = true;
        return radius * std::cos(angle);
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
    {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4]{};
    double cached_ = 0.0;
    bool has_cached_ = false;
};

/// Fisher-Yates shuffle driven by Rng::below; std::shuffle's use of the
/// engine is implementation-defined and would break cross-platform replay.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng)
{
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const std::uint64_t j = rng.below(i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

} // namespace bnnvc
