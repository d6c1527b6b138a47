#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace prer {

/// splitmix64 step; used for seeding and stream derivation.
std::uint64_t splitmix64(std::uint64_t& state);

/// Deterministic generator: xoshiro256** seeded through splitmix64.
///
/// All distributions are implemented here rather than through <random> so
/// that a given seed yields the same sequence on every platform and
/// standard library.
class Rng {
public:
    static constexpr std::string_view algorithm = "xoshiro256**/splitmix64";

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller; the spare value is cached.
    double normal();
    /// Index drawn proportionally to non-negative `weights`.
    std::size_t categorical(std::span<const double> weights);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Independent generator for a named sub-stream. Derivation depends only
    /// on this generator's seed and `stream`, never on how many values have
    /// been drawn.
    Rng derive(std::string_view stream) const;
    Rng derive(std::string_view stream, std::uint64_t index) const;

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace prer
