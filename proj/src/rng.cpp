#include "dclseg/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dclseg/errors.hpp"

namespace dclseg {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw ValidationError("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw ValidationError("uniform_int: empty range");
    return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::size_t>(hi - lo) + 1));
}

double Rng::normal() {
    // 1 - uniform() lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork() { return Rng(engine_()); }

std::string Rng::serialize() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
}

Rng Rng::deserialize(std::string_view text) {
    Rng rng;
    std::istringstream in{std::string(text)};
    in >> rng.engine_;
    if (in.fail()) throw FormatError("malformed RNG state");
    return rng;
}

}  // namespace dclseg
