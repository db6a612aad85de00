#pragma once

// Minimal undirected-graph helpers shared by topology, keying and analysis.

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

namespace cfl {

// Adjacency list over vertices 0..n-1. Edges are stored both ways.
struct AdjacencyList {
    std::vector<std::vector<std::uint32_t>> neighbors;

    explicit AdjacencyList(std::size_t n = 0) : neighbors(n) {}

    std::size_t size() const { return neighbors.size(); }

    void add_edge(std::uint32_t a, std::uint32_t b) {
        neighbors[a].push_back(b);
        neighbors[b].push_back(a);
    }

    std::size_t edge_count() const {
        std::size_t deg = 0;
        for (const auto& n : neighbors) deg += n.size();
        return deg / 2;
    }

    void sort_neighbors() {
        for (auto& n : neighbors) std::sort(n.begin(), n.end());
    }
};

// BFS from `start`, restricted to vertices where mask[v] is true (empty mask
// means all vertices). Returns visited flags.
inline std::vector<char> bfs_reach(const AdjacencyList& g, std::uint32_t start,
                                   const std::vector<char>& mask = {}) {
    std::vector<char> seen(g.size(), 0);
    if (!mask.empty() && !mask[start]) return seen;
    std::vector<std::uint32_t> queue{start};
    seen[start] = 1;
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::uint32_t u = queue[head];
        for (std::uint32_t v : g.neighbors[u]) {
            if (seen[v] || (!mask.empty() && !mask[v])) continue;
            seen[v] = 1;
            queue.push_back(v);
        }
    }
    return seen;
}

inline bool is_connected(const AdjacencyList& g) {
    if (g.size() == 0) return true;
    const auto seen = bfs_reach(g, 0);
    return std::count(seen.begin(), seen.end(), 1) == static_cast<long>(g.size());
}

// Connected components over a vertex subset; each component is sorted.
inline std::vector<std::vector<std::uint32_t>> components(const AdjacencyList& g,
                                                          const std::vector<std::uint32_t>& verts) {
    std::vector<char> mask(g.size(), 0);
    for (auto v : verts) mask[v] = 1;
    std::vector<char> done(g.size(), 0);
    std::vector<std::vector<std::uint32_t>> out;
    for (auto v : verts) {
        if (done[v]) continue;
        auto seen = bfs_reach(g, v, mask);
        std::vector<std::uint32_t> comp;
        for (auto u : verts) {
            if (seen[u] && !done[u]) {
                done[u] = 1;
                comp.push_back(u);
            }
        }
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
    }
    return out;
}

}  // namespace cfl
