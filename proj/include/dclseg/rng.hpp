#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dclseg {

/// Seedable generator with a serializable state. Every draw is a fixed
/// function of the engine output so trajectories are reproducible across
/// standard libraries (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n); n must be > 0.
    std::size_t uniform_index(std::size_t n);
    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    bool bernoulli(double p) { return uniform() < p; }
    // Standard normal via Box-Muller; no cached spare value.
    double normal();

    // Independent generator derived from this one's next output.
    Rng fork();

    std::string serialize() const;
    static Rng deserialize(std::string_view text);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace dclseg
