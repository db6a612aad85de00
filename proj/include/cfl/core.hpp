#pragma once

// Common vocabulary for the cfl library: client identities, error types,
// and the deterministic RNG used everywhere. All randomness flows through
// Rng so that a scenario is fully reproducible from its seeds.

#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfl {

struct ClientId {
    std::uint32_t value{0};
    auto operator<=>(const ClientId&) const = default;
};

// The coordinating server is not a client; it gets a reserved address so
// message traces can name it.
inline constexpr ClientId kServerId{0xFFFFFFFFu};

inline std::string to_string(ClientId id) {
    return id == kServerId ? std::string("server") : std::to_string(id.value);
}

using Bytes = std::vector<std::uint8_t>;

// ---- error types ----------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ClusterInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RingInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RouteInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoSharedKey : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotVotingMember : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonceReuse : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedKeyLength : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotNeighbor : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct WeightMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- deterministic RNG ----------------------------------------------------

// Thin wrapper over mt19937_64 that implements its own distributions.
// std::uniform_*_distribution output is not pinned by the standard, so using
// them would make "same seed, same bytes" depend on the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased integer in [0, bound). bound = 0 is a caller bug.
    std::uint64_t below(std::uint64_t bound) {
        // rejection sampling on the top of the range
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    std::size_t index(std::size_t size) { return static_cast<std::size_t>(below(size)); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (no cached spare, keeps replay trivial).
    double normal(double mean, double stddev) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * mag * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool chance(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[index(v.size())];
    }

    Bytes bytes(std::size_t n) {
        Bytes out(n);
        for (std::size_t i = 0; i < n; i += 8) {
            const std::uint64_t x = engine_();
            for (std::size_t j = 0; j < 8 && i + j < n; ++j) {
                out[i + j] = static_cast<std::uint8_t>(x >> (8 * j));
            }
        }
        return out;
    }

    // Derive an independent stream; `salt` separates call sites.
    Rng fork(std::uint64_t salt) {
        return Rng(engine_() ^ (salt * 0x9E3779B97F4A7C15ull));
    }

private:
    std::mt19937_64 engine_;
};

// splitmix64 step, used to derive per-site seeds from a scenario seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull + b * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::string to_hex(const Bytes& b) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (auto x : b) {
        s.push_back(digits[x >> 4]);
        s.push_back(digits[x & 0xF]);
    }
    return s;
}

}  // namespace cfl

template <>
struct std::hash<cfl::ClientId> {
    std::size_t operator()(const cfl::ClientId& id) const noexcept {
        return std::hash<std::uint32_t>{}(id.value);
    }
};
