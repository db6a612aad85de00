#pragma once

// Inner-cluster aggregation machinery and the cross-cluster combine.
//
// The leader adds a random mask to its weighted update and the accumulator
// travels an in-cluster route planned by depth-first traversal over the
// communication-key graph: unvisited targets are preferred, already-visited
// ones are relay hops only (their contribution is added exactly once), and
// the walk returns to the leader, who removes the mask.
//
// Arithmetic follows the configured mode. In fixed mode the accumulator lanes
// carry quantized updates multiplied by integer dataset sizes, so every
// addition (and the mask cancellation) is exact; one division by the total
// participating dataset size happens after the cross-cluster sum.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "cfl/core.hpp"
#include "cfl/crypto.hpp"
#include "cfl/graph.hpp"
#include "cfl/model.hpp"

namespace cfl {

// Mode-tagged vector so relay code does not care which arithmetic is active.
struct AggVector {
    ArithmeticMode mode{ArithmeticMode::Fixed};
    ModelVector fv;   // float mode
    FixedVector qv;   // fixed mode

    static AggVector zero(ArithmeticMode m, std::size_t dim) {
        AggVector v;
        v.mode = m;
        if (m == ArithmeticMode::Float) {
            v.fv = ModelVector(dim);
        } else {
            v.qv = FixedVector(dim);
        }
        return v;
    }

    std::size_t dim() const { return mode == ArithmeticMode::Float ? fv.dim() : qv.dim(); }
    bool operator==(const AggVector&) const = default;
};

inline void add_in_place(AggVector& acc, const AggVector& v) {
    if (acc.mode != v.mode) throw ConfigError("mixed arithmetic modes");
    if (acc.mode == ArithmeticMode::Float) {
        check_same_dim(acc.fv, v.fv);
        for (std::size_t i = 0; i < acc.fv.dim(); ++i) acc.fv[i] += v.fv[i];
    } else {
        add_in_place(acc.qv, v.qv);
    }
}

inline void subtract_in_place(AggVector& acc, const AggVector& v) {
    if (acc.mode != v.mode) throw ConfigError("mixed arithmetic modes");
    if (acc.mode == ArithmeticMode::Float) {
        check_same_dim(acc.fv, v.fv);
        for (std::size_t i = 0; i < acc.fv.dim(); ++i) acc.fv[i] -= v.fv[i];
    } else {
        subtract_in_place(acc.qv, v.qv);
    }
}

inline Bytes serialize(const AggVector& v) {
    return v.mode == ArithmeticMode::Float ? serialize(v.fv) : serialize(v.qv);
}

inline AggVector deserialize_agg(const Bytes& in) {
    AggVector v;
    if (!in.empty() && in[0] == 0x01) {
        v.mode = ArithmeticMode::Float;
        v.fv = deserialize_model(in);
    } else {
        v.mode = ArithmeticMode::Fixed;
        v.qv = deserialize_fixed(in);
    }
    return v;
}

// A target's weighted contribution in the active mode. Float mode applies the
// in-cluster weight p directly; fixed mode folds in the integer dataset size
// and leaves the division for the very end.
inline AggVector weighted_contribution(ArithmeticMode mode, const ModelVector& x, double p,
                                       std::uint64_t dataset_size) {
    AggVector v;
    v.mode = mode;
    if (mode == ArithmeticMode::Float) {
        if (p < 0.0 || p > 1.0) throw DomainError("weight outside [0,1]");
        v.fv = scale(x, p);
    } else {
        v.qv = quantize_weighted(x, dataset_size);
    }
    return v;
}

// ---- masking -------------------------------------------------------------------

struct MaskResult {
    AggVector masked;  // X-hat, what leaves the leader
    AggVector mask;    // s, retained by the leader only
};

// s is sampled i.i.d. per dimension, uniform in [-bound, bound] (model units;
// fixed mode uses the corresponding lane range).
inline AggVector sample_mask(ArithmeticMode mode, std::size_t dim, double bound,
                             std::uint64_t seed) {
    Rng rng(seed);
    AggVector s = AggVector::zero(mode, dim);
    if (mode == ArithmeticMode::Float) {
        for (std::size_t i = 0; i < dim; ++i) s.fv[i] = rng.uniform(-bound, bound);
    } else {
        const std::uint64_t lane_bound =
            static_cast<std::uint64_t>(std::llround(bound * kFixedScale));
        for (std::size_t i = 0; i < dim; ++i) {
            const std::int64_t lane =
                static_cast<std::int64_t>(rng.below(2 * lane_bound + 1)) -
                static_cast<std::int64_t>(lane_bound);
            s.qv.lanes[i] = std::bit_cast<std::uint64_t>(lane);
        }
    }
    return s;
}

inline MaskResult mask(const AggVector& leader_contribution, double bound, std::uint64_t seed) {
    MaskResult r;
    r.mask = sample_mask(leader_contribution.mode, leader_contribution.dim(), bound, seed);
    r.masked = leader_contribution;
    add_in_place(r.masked, r.mask);
    return r;
}

// sum_h = acc - s once the accumulator is back at the leader.
inline AggVector unmask_and_sum(const AggVector& acc, const AggVector& s) {
    AggVector out = acc;
    subtract_in_place(out, s);
    return out;
}

// ---- route planning ---------------------------------------------------------------

struct AggregationRoute {
    std::uint32_t cluster{0};
    std::vector<ClientId> order;  // starts and ends at the leader

    std::size_t transmissions() const { return order.empty() ? 0 : order.size() - 1; }
};

namespace detail {

// BFS shortest path (sequence of vertices, inclusive) or empty when
// unreachable. An optional mask restricts the walkable vertices.
inline std::vector<std::uint32_t> shortest_path(const AdjacencyList& g, std::uint32_t from,
                                                std::uint32_t to,
                                                const std::vector<char>& alive = {}) {
    std::vector<std::int64_t> prev(g.size(), -1);
    std::vector<char> seen(g.size(), 0);
    std::vector<std::uint32_t> queue{from};
    seen[from] = 1;
    for (std::size_t head = 0; head < queue.size() && !seen[to]; ++head) {
        const std::uint32_t u = queue[head];
        for (std::uint32_t v : g.neighbors[u]) {
            if (seen[v] || (!alive.empty() && !alive[v])) continue;
            seen[v] = 1;
            prev[v] = u;
            queue.push_back(v);
        }
    }
    if (!seen[to]) return {};
    std::vector<std::uint32_t> path{to};
    while (path.back() != from) path.push_back(static_cast<std::uint32_t>(prev[path.back()]));
    std::reverse(path.begin(), path.end());
    return path;
}

}  // namespace detail

// Depth-first walk over the live-target key graph: from the leader, keep
// moving to a random unvisited neighbor; dead ends backtrack along the stack
// (each backtrack hop is a real transmission); when every target has been
// visited the holder returns to the leader along a shortest path.
// Vertices are indices into the caller's live-target list.
inline std::vector<std::uint32_t> plan_route_walk(const AdjacencyList& g, std::uint32_t leader,
                                                  std::uint64_t seed) {
    const std::size_t n = g.size();
    if (n == 0) throw RouteInfeasible("no live targets");
    if (n == 1) return {leader};
    {
        const auto seen = bfs_reach(g, leader);
        if (std::count(seen.begin(), seen.end(), 1) != static_cast<long>(n)) {
            throw RouteInfeasible("live-target key graph is disconnected");
        }
    }
    Rng rng(seed);
    std::vector<char> visited(n, 0);
    std::vector<std::uint32_t> walk{leader}, stack{leader};
    visited[leader] = 1;
    std::size_t visited_count = 1;
    while (visited_count < n) {
        const std::uint32_t u = walk.back();
        std::vector<std::uint32_t> fresh;
        for (std::uint32_t v : g.neighbors[u]) {
            if (!visited[v]) fresh.push_back(v);
        }
        if (!fresh.empty()) {
            const std::uint32_t v = fresh[rng.index(fresh.size())];
            visited[v] = 1;
            visited_count++;
            walk.push_back(v);
            stack.push_back(v);
        } else {
            stack.pop_back();  // dead end: hand the accumulator back
            walk.push_back(stack.back());
        }
    }
    if (walk.back() != leader) {
        auto path = detail::shortest_path(g, walk.back(), leader);
        walk.insert(walk.end(), path.begin() + 1, path.end());
    }
    return walk;
}

inline AggregationRoute plan_route(const AdjacencyList& live_key_graph,
                                   const std::vector<ClientId>& live_targets, std::uint32_t leader_index,
                                   std::uint32_t cluster_index, std::uint64_t seed) {
    AggregationRoute route;
    route.cluster = cluster_index;
    for (auto idx : plan_route_walk(live_key_graph, leader_index, seed)) {
        route.order.push_back(live_targets[idx]);
    }
    return route;
}

// ---- relay steps --------------------------------------------------------------------

// One hop of the relay: stamp, seal under the comm key of (from, to) with a
// fresh deterministic nonce, and hand the envelope to the transport.
inline Envelope seal_hop(const AggVector& acc, std::uint32_t round, std::uint32_t step,
                         std::uint64_t wall_ms, ClientId from, ClientId to, const Bytes& comm_key,
                         std::uint32_t sender_counter, NonceRegistry& registry) {
    StampedPayload payload{serialize(acc), Timestamp{round, step, wall_ms}};
    Envelope env = ae_encrypt(payload, comm_key, make_nonce(round, step, sender_counter), registry);
    env.key_a = from;
    env.key_b = to;
    return env;
}

struct OpenResult {
    bool auth_ok{false};
    bool stamp_ok{false};
    AggVector value;
};

inline OpenResult open_hop(const Envelope& env, const Bytes& comm_key, std::uint32_t round,
                           std::uint32_t step, std::uint64_t now_ms, std::uint64_t window_ms) {
    OpenResult r;
    auto payload = ae_decrypt(env, comm_key);
    if (!payload) return r;
    r.auth_ok = true;
    r.stamp_ok = validate_timestamp(*payload, round, step, now_ms, window_ms);
    if (r.stamp_ok) r.value = deserialize_agg(payload->payload);
    return r;
}

// ---- cross-cluster -------------------------------------------------------------------

// Float mode: SUM = sum q_h * sum_h with the weights summing to one.
inline ModelVector cross_cluster_aggregate(const std::vector<std::pair<ModelVector, double>>& sums) {
    if (sums.empty()) throw WeightMismatch("no cluster sums");
    double total = 0.0;
    for (const auto& [v, q] : sums) total += q;
    if (std::abs(total - 1.0) > 1e-12) {
        throw WeightMismatch("cluster weights sum to " + std::to_string(total));
    }
    ModelVector out(sums.front().first.dim());
    for (const auto& [v, q] : sums) {
        check_same_dim(out, v);
        for (std::size_t i = 0; i < out.dim(); ++i) out[i] += q * v[i];
    }
    return out;
}

// Fixed mode: cluster sums arrive as exact numerators with their integer
// participating dataset sizes; the single division happens here.
struct FixedCrossResult {
    FixedVector lanes;           // exact sum of all cluster numerators
    std::uint64_t total_weight;  // sum of participating dataset sizes
    ModelVector value;           // lanes / (total_weight * 2^32)
};

inline FixedCrossResult cross_cluster_aggregate_fixed(
    const std::vector<std::pair<FixedVector, std::uint64_t>>& sums) {
    if (sums.empty()) throw WeightMismatch("no cluster sums");
    FixedCrossResult out;
    out.lanes = FixedVector(sums.front().first.dim());
    out.total_weight = 0;
    for (const auto& [v, weight] : sums) {
        add_in_place(out.lanes, v);
        out.total_weight += weight;
    }
    if (out.total_weight == 0) throw WeightMismatch("total participating dataset size is zero");
    out.value = unweigh_fixed(out.lanes, out.total_weight);
    return out;
}

// W^{t+1} = W^t + SUM^t
inline ModelVector global_update(const ModelVector& w, const ModelVector& sum) {
    return add(w, sum);
}

}  // namespace cfl
