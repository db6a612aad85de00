#pragma once

// Connectivity mathematics for the key-ring graphs: the threshold edge
// probability for a desired connectivity probability, the matching ring size,
// and Monte Carlo validation over sampled graphs. Two graph models are
// supported because the ring scheme fixes the degree per client while the
// threshold analysis assumes independent edges; the sweeps report both.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cfl/core.hpp"
#include "cfl/graph.hpp"

namespace cfl {

inline double ring_size_real(std::size_t n_h, double p_c) {
    if (n_h < 2) throw DomainError("cluster size must be >= 2");
    if (!(p_c > 0.0 && p_c < 1.0)) throw DomainError("connectivity probability must be in (0,1)");
    return std::log(static_cast<double>(n_h)) - std::log(-std::log(p_c));
}

// Key-ring size for cluster size n_h and desired connectivity probability.
// The formula yields a real; we take the ceiling (conservative) and clamp to
// the feasible range [1, n_h - 1].
inline std::size_t ring_size(std::size_t n_h, double p_c) {
    const double real = ring_size_real(n_h, p_c);
    const double clamped = std::clamp(std::ceil(real), 1.0, static_cast<double>(n_h - 1));
    return static_cast<std::size_t>(clamped);
}

inline double edge_probability(std::size_t n_h, double p_c) {
    return std::clamp(ring_size_real(n_h, p_c) / static_cast<double>(n_h), 0.0, 1.0);
}

// ---- random graph sampling --------------------------------------------------

// G(n, p) with geometric skips over the pair enumeration, O(edges).
inline AdjacencyList sample_erdos_renyi(std::size_t n, double p, Rng& rng) {
    AdjacencyList g(n);
    if (p <= 0.0 || n < 2) return g;
    if (p >= 1.0) {
        for (std::uint32_t a = 0; a < n; ++a) {
            for (std::uint32_t b = a + 1; b < n; ++b) g.add_edge(a, b);
        }
        return g;
    }
    const double logq = std::log(1.0 - p);
    long long v = 1, w = -1;
    while (v < static_cast<long long>(n)) {
        const double r = std::max(rng.uniform(), 1e-300);
        w += 1 + static_cast<long long>(std::floor(std::log(r) / logq));
        while (w >= v && v < static_cast<long long>(n)) {
            w -= v;
            v += 1;
        }
        if (v < static_cast<long long>(n)) {
            g.add_edge(static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(w));
        }
    }
    return g;
}

// Random m-regular graph by stub pairing with swap repair. When n*m is odd a
// perfect regular graph cannot exist; the lowest vertex carries one extra
// stub so everyone else still gets exactly m. Dense degrees are sampled as
// the complement of a sparse regular graph, where stub pairing converges.
inline AdjacencyList sample_regular_graph(std::size_t n, std::size_t m, Rng& rng) {
    if (m >= n) throw RingInfeasible("degree " + std::to_string(m) + " needs more than " +
                                     std::to_string(n) + " vertices");
    if (m == n - 1) {
        AdjacencyList g(n);
        for (std::uint32_t a = 0; a < n; ++a) {
            for (std::uint32_t b = a + 1; b < n; ++b) g.add_edge(a, b);
        }
        return g;
    }
    if (m > (n - 1) / 2) {
        const AdjacencyList sparse = sample_regular_graph(n, n - 1 - m, rng);
        std::vector<std::vector<char>> excluded(n, std::vector<char>(n, 0));
        for (std::uint32_t a = 0; a < n; ++a) {
            for (auto b : sparse.neighbors[a]) excluded[a][b] = 1;
        }
        AdjacencyList g(n);
        for (std::uint32_t a = 0; a < n; ++a) {
            for (std::uint32_t b = a + 1; b < n; ++b) {
                if (!excluded[a][b]) g.add_edge(a, b);
            }
        }
        return g;
    }
    auto edge_key = [](std::uint32_t a, std::uint32_t b) {
        if (a > b) std::swap(a, b);
        return (static_cast<std::uint64_t>(a) << 32) | b;
    };
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<std::uint32_t> stubs;
        stubs.reserve(n * m + 1);
        for (std::uint32_t v = 0; v < n; ++v) {
            for (std::size_t k = 0; k < m; ++k) stubs.push_back(v);
        }
        if (stubs.size() % 2 == 1) stubs.push_back(0);
        rng.shuffle(stubs);

        std::unordered_set<std::uint64_t> used;
        std::vector<std::pair<std::uint32_t, std::uint32_t>> edges, bad;
        for (std::size_t i = 0; i + 1 < stubs.size(); i += 2) {
            const std::uint32_t a = stubs[i], b = stubs[i + 1];
            if (a == b || used.count(edge_key(a, b))) {
                bad.emplace_back(a, b);
            } else {
                used.insert(edge_key(a, b));
                edges.emplace_back(a, b);
            }
        }
        // repair collisions by swapping endpoints with random good edges
        bool ok = true;
        for (auto [a, b] : bad) {
            bool fixed = false;
            for (int tries = 0; tries < 512 && !fixed; ++tries) {
                const auto& [c, d] = edges[rng.index(edges.size())];
                // rewire (a,b),(c,d) -> (a,c),(b,d)
                if (a != c && b != d && !(a == d && b == c) && !used.count(edge_key(a, c)) &&
                    !used.count(edge_key(b, d))) {
                    used.erase(edge_key(c, d));
                    const std::uint32_t c2 = c, d2 = d;
                    std::erase_if(edges, [&](const auto& e) { return e.first == c2 && e.second == d2; });
                    used.insert(edge_key(a, c2));
                    used.insert(edge_key(b, d2));
                    edges.emplace_back(a, c2);
                    edges.emplace_back(b, d2);
                    fixed = true;
                }
            }
            if (!fixed) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        AdjacencyList g(n);
        for (auto [a, b] : edges) g.add_edge(a, b);
        return g;
    }
    throw RingInfeasible("could not realize a simple " + std::to_string(m) + "-regular graph on " +
                         std::to_string(n) + " vertices");
}

// ---- Monte Carlo ------------------------------------------------------------

enum class GraphModel { ErdosRenyi, KeyRing };

// Fraction of `trials` sampled graphs that are connected. For ErdosRenyi the
// parameter is the edge probability r_h; for KeyRing it is the ring size m_h.
inline double monte_carlo_connectivity(std::size_t n, GraphModel model, double parameter,
                                       std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw DomainError("trials must be >= 1");
    std::size_t connected = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(seed + 0x51ED2700ull * (t + 1));
        AdjacencyList g = model == GraphModel::ErdosRenyi
                              ? sample_erdos_renyi(n, parameter, rng)
                              : sample_regular_graph(n, static_cast<std::size_t>(parameter), rng);
        if (is_connected(g)) connected++;
    }
    return static_cast<double>(connected) / static_cast<double>(trials);
}

struct ConnectivityRow {
    std::size_t n_h;
    double p_c;
    std::size_t m_h;
    double r_h;
    double empirical_ring;
    double empirical_er;
    std::size_t trials;
};

inline ConnectivityRow connectivity_sweep_point(std::size_t n, double p_c, std::size_t trials,
                                                std::uint64_t seed) {
    ConnectivityRow row{};
    row.n_h = n;
    row.p_c = p_c;
    row.m_h = ring_size(n, p_c);
    row.r_h = edge_probability(n, p_c);
    row.empirical_ring = monte_carlo_connectivity(n, GraphModel::KeyRing,
                                                  static_cast<double>(row.m_h), trials, seed);
    row.empirical_er = monte_carlo_connectivity(n, GraphModel::ErdosRenyi, row.r_h, trials, seed ^ 0xA5A5A5A5ull);
    row.trials = trials;
    return row;
}

inline std::string connectivity_csv_header() {
    return "n,pc,m_h,r_h,empirical_ring,empirical_er,trials\n";
}

inline std::string to_csv(const ConnectivityRow& r) {
    std::ostringstream out;
    out << r.n_h << "," << r.p_c << "," << r.m_h << "," << r.r_h << "," << r.empirical_ring << ","
        << r.empirical_er << "," << r.trials << "\n";
    return out.str();
}

}  // namespace cfl
