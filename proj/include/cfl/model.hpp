#pragma once

// ModelVector is the d-dimensional value that every protocol quantity shares:
// global model W, local model w, update x, weighted update X, mask s, and the
// cluster/global sums. Aggregation runs in one of two arithmetic modes:
//
//   float  - IEEE doubles end to end, mirrors the equations literally.
//   fixed  - updates are quantised to 64-bit lanes (scale 2^-32) and weighted
//            by integer dataset sizes; all additions are exact (mod 2^64), and
//            the single division by the total weight happens at the very end.
//            Masking cancels exactly, so the hierarchical result is bit-equal
//            to flat aggregation.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cfl/core.hpp"

namespace cfl {

enum class ArithmeticMode { Float, Fixed };

inline const char* to_string(ArithmeticMode m) {
    return m == ArithmeticMode::Float ? "float" : "fixed";
}

struct ModelVector {
    std::vector<double> values;

    ModelVector() = default;
    explicit ModelVector(std::size_t dim, double fill = 0.0) : values(dim, fill) {}
    explicit ModelVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t dim() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool operator==(const ModelVector&) const = default;

    double norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }
};

inline void check_same_dim(const ModelVector& a, const ModelVector& b) {
    if (a.dim() != b.dim()) {
        throw DimensionMismatch("vector dimensions differ: " + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()));
    }
}

inline ModelVector add(const ModelVector& a, const ModelVector& b) {
    check_same_dim(a, b);
    ModelVector out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline ModelVector subtract(const ModelVector& a, const ModelVector& b) {
    check_same_dim(a, b);
    ModelVector out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline ModelVector scale(const ModelVector& a, double factor) {
    ModelVector out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] * factor;
    return out;
}

// ---- fixed-point lanes ------------------------------------------------------

// Lanes are two's-complement int64 carried in uint64 so wraparound is defined.
// Lane semantics during aggregation: round(x * 2^32) * dataset_size, i.e. the
// numerator of the weighted update with the weight-sum denominator left
// implicit until unweigh_fixed.
inline constexpr double kFixedScale = 4294967296.0;  // 2^32

struct FixedVector {
    std::vector<std::uint64_t> lanes;

    FixedVector() = default;
    explicit FixedVector(std::size_t dim) : lanes(dim, 0) {}

    std::size_t dim() const { return lanes.size(); }
    bool operator==(const FixedVector&) const = default;
};

inline std::uint64_t to_lane(double v) {
    return std::bit_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(v * kFixedScale)));
}

inline FixedVector quantize(const ModelVector& v) {
    FixedVector out(v.dim());
    for (std::size_t i = 0; i < v.dim(); ++i) out.lanes[i] = to_lane(v[i]);
    return out;
}

// Quantize then fold in an integer weight; products wrap mod 2^64 like the sums.
inline FixedVector quantize_weighted(const ModelVector& v, std::uint64_t weight) {
    FixedVector out(v.dim());
    for (std::size_t i = 0; i < v.dim(); ++i) out.lanes[i] = to_lane(v[i]) * weight;
    return out;
}

inline void add_in_place(FixedVector& acc, const FixedVector& v) {
    if (acc.dim() != v.dim()) throw DimensionMismatch("fixed vector dimensions differ");
    for (std::size_t i = 0; i < acc.dim(); ++i) acc.lanes[i] += v.lanes[i];
}

inline void subtract_in_place(FixedVector& acc, const FixedVector& v) {
    if (acc.dim() != v.dim()) throw DimensionMismatch("fixed vector dimensions differ");
    for (std::size_t i = 0; i < acc.dim(); ++i) acc.lanes[i] -= v.lanes[i];
}

// Final step of fixed aggregation: divide the exact integer numerators by the
// total participating dataset size and drop back to model units.
inline ModelVector unweigh_fixed(const FixedVector& v, std::uint64_t total_weight) {
    ModelVector out(v.dim());
    const double denom = static_cast<double>(total_weight) * kFixedScale;
    for (std::size_t i = 0; i < v.dim(); ++i) {
        out[i] = static_cast<double>(std::bit_cast<std::int64_t>(v.lanes[i])) / denom;
    }
    return out;
}

// ---- wire format ------------------------------------------------------------

// Little-endian u64 lanes with a length prefix; doubles are bit-cast so the
// float-mode payload is byte-identical across runs.
inline void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const Bytes& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw ConfigError("truncated buffer reading u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
}

inline std::uint64_t get_u64(const Bytes& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw ConfigError("truncated buffer reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += 8;
    return v;
}

inline Bytes serialize(const ModelVector& v) {
    Bytes out;
    out.reserve(5 + 8 * v.dim());
    out.push_back(0x01);  // tag: float lanes
    put_u32(out, static_cast<std::uint32_t>(v.dim()));
    for (double x : v.values) put_u64(out, std::bit_cast<std::uint64_t>(x));
    return out;
}

inline Bytes serialize(const FixedVector& v) {
    Bytes out;
    out.reserve(5 + 8 * v.dim());
    out.push_back(0x02);  // tag: fixed lanes
    put_u32(out, static_cast<std::uint32_t>(v.dim()));
    for (std::uint64_t x : v.lanes) put_u64(out, x);
    return out;
}

inline ModelVector deserialize_model(const Bytes& in) {
    std::size_t pos = 0;
    if (in.empty() || in[pos++] != 0x01) throw ConfigError("not a float vector payload");
    const std::uint32_t d = get_u32(in, pos);
    ModelVector v(d);
    for (std::uint32_t i = 0; i < d; ++i) v[i] = std::bit_cast<double>(get_u64(in, pos));
    return v;
}

inline FixedVector deserialize_fixed(const Bytes& in) {
    std::size_t pos = 0;
    if (in.empty() || in[pos++] != 0x02) throw ConfigError("not a fixed vector payload");
    const std::uint32_t d = get_u32(in, pos);
    FixedVector v(d);
    for (std::uint32_t i = 0; i < d; ++i) v.lanes[i] = get_u64(in, pos);
    return v;
}

}  // namespace cfl
