#pragma once

// Geometric network generation and cluster division.
//
// Clients are points in a square with a constant communication radius; an
// edge exists where two clients are mutually in range. Cluster division is a
// seeded k-means over positions followed by a connectivity repair pass, so
// every cluster's induced subgraph is connected (stragglers move to the
// nearest cluster they can actually reach, or end up flagged isolated).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cfl/core.hpp"
#include "cfl/graph.hpp"

namespace cfl {

struct Point {
    double x{0.0};
    double y{0.0};
};

inline double distance(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

struct NetworkTopology {
    std::vector<Point> positions;              // index = ClientId.value
    double range{0.0};
    AdjacencyList graph;                       // range edges, both directions
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // a < b

    std::size_t client_count() const { return positions.size(); }

    bool has_edge(ClientId a, ClientId b) const {
        if (a == b) return false;
        const auto& n = graph.neighbors[a.value];
        return std::find(n.begin(), n.end(), b.value) != n.end();
    }
};

struct Cluster {
    std::vector<ClientId> members;         // U_h, sorted by id
    std::set<ClientId> targets;            // C_h
    std::set<ClientId> server_adjacent;
    std::set<ClientId> isolated;           // unreachable from the cluster core
    std::set<ClientId> revoked;            // cut off by key revocation
    ClientId leader{};
    Point centroid{};

    std::size_t size() const { return members.size(); }
    bool is_target(ClientId id) const { return targets.count(id) != 0; }
};

struct ClusterPlan {
    std::vector<Cluster> clusters;
    std::vector<std::uint32_t> cluster_of;  // client id -> cluster index

    std::size_t target_count() const {
        std::size_t n = 0;
        for (const auto& c : clusters) n += c.targets.size();
        return n;
    }
};

inline NetworkTopology generate_topology(std::size_t n_clients, double area_side,
                                         double range, std::uint64_t seed) {
    if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
    if (range <= 0.0) throw ConfigError("range must be > 0");
    NetworkTopology topo;
    topo.range = range;
    topo.positions.resize(n_clients);
    Rng rng(seed);
    for (auto& p : topo.positions) {
        p.x = rng.uniform(0.0, area_side);
        p.y = rng.uniform(0.0, area_side);
    }
    topo.graph = AdjacencyList(n_clients);
    for (std::uint32_t a = 0; a < n_clients; ++a) {
        for (std::uint32_t b = a + 1; b < n_clients; ++b) {
            if (distance(topo.positions[a], topo.positions[b]) <= range) {
                topo.graph.add_edge(a, b);
                topo.edges.emplace_back(a, b);
            }
        }
    }
    topo.graph.sort_neighbors();
    return topo;
}

namespace detail {

// k-means++ seeding + Lloyd iterations; empty clusters steal the farthest
// point of the largest cluster so exactly `k` non-empty groups come out.
inline std::vector<std::uint32_t> kmeans_assign(const std::vector<Point>& pts, std::size_t k,
                                                Rng& rng) {
    const std::size_t n = pts.size();
    std::vector<Point> centers;
    centers.push_back(pts[rng.index(n)]);
    std::vector<double> dist2(n);
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : centers) best = std::min(best, distance(pts[i], c));
            dist2[i] = best * best;
            total += dist2[i];
        }
        if (total <= 0.0) {
            centers.push_back(pts[rng.index(n)]);  // all points coincide
            continue;
        }
        double pickpoint = rng.uniform() * total;
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            pickpoint -= dist2[i];
            if (pickpoint <= 0.0) {
                chosen = i;
                break;
            }
        }
        centers.push_back(pts[chosen]);
    }

    std::vector<std::uint32_t> assign(n, 0);
    for (int iter = 0; iter < 50; ++iter) {
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t best = 0;
            double bestd = std::numeric_limits<double>::max();
            for (std::uint32_t c = 0; c < centers.size(); ++c) {
                const double d = distance(pts[i], centers[c]);
                if (d < bestd) {
                    bestd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                moved = true;
            }
        }
        std::vector<std::size_t> count(k, 0);
        std::vector<Point> sum(k);
        for (std::size_t i = 0; i < n; ++i) {
            count[assign[i]]++;
            sum[assign[i]].x += pts[i].x;
            sum[assign[i]].y += pts[i].y;
        }
        for (std::uint32_t c = 0; c < k; ++c) {
            if (count[c] == 0) {
                // steal the point farthest from its center in the biggest cluster
                std::uint32_t big = static_cast<std::uint32_t>(
                    std::max_element(count.begin(), count.end()) - count.begin());
                std::size_t far_i = n;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (assign[i] != big || count[big] <= 1) continue;
                    const double d = distance(pts[i], centers[big]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                if (far_i < n) {
                    count[big]--;
                    sum[big].x -= pts[far_i].x;
                    sum[big].y -= pts[far_i].y;
                    assign[far_i] = c;
                    count[c] = 1;
                    sum[c] = pts[far_i];
                    moved = true;
                }
            }
            if (count[c] > 0) {
                centers[c] = {sum[c].x / count[c], sum[c].y / count[c]};
            }
        }
        if (!moved) break;
    }
    return assign;
}

}  // namespace detail

// Divide all clients into n_clusters connected groups and pick one
// server-adjacent leader per cluster. server_adjacent_fraction controls how
// many members per cluster get a direct server link (at least one when the
// fraction is positive).
inline ClusterPlan divide_clusters(const NetworkTopology& topo, std::size_t n_clusters,
                                   std::uint64_t seed, double server_adjacent_fraction = 0.1) {
    const std::size_t n = topo.client_count();
    if (n_clusters < 1) throw ConfigError("cluster count must be >= 1");
    if (n_clusters > n) throw ConfigError("more clusters than clients");

    Rng rng(seed);
    std::vector<std::uint32_t> assign = detail::kmeans_assign(topo.positions, n_clusters, rng);

    // Connectivity repair: a member not connected to its cluster core moves to
    // the nearest cluster whose core it has an edge to. Repeat to a fixpoint.
    std::vector<Point> centroids(n_clusters);
    auto recompute_centroids = [&] {
        std::vector<std::size_t> count(n_clusters, 0);
        std::vector<Point> sum(n_clusters);
        for (std::uint32_t i = 0; i < n; ++i) {
            count[assign[i]]++;
            sum[assign[i]].x += topo.positions[i].x;
            sum[assign[i]].y += topo.positions[i].y;
        }
        for (std::size_t c = 0; c < n_clusters; ++c) {
            if (count[c] > 0) centroids[c] = {sum[c].x / count[c], sum[c].y / count[c]};
        }
    };

    std::vector<char> in_core(n, 0);
    auto core_pass = [&]() -> std::vector<std::uint32_t> {
        recompute_centroids();
        std::fill(in_core.begin(), in_core.end(), 0);
        std::vector<std::uint32_t> stragglers;
        for (std::uint32_t c = 0; c < n_clusters; ++c) {
            std::vector<std::uint32_t> members;
            for (std::uint32_t i = 0; i < n; ++i) {
                if (assign[i] == c) members.push_back(i);
            }
            if (members.empty()) continue;
            auto comps = components(topo.graph, members);
            // core component: the one holding the member closest to the centroid
            std::uint32_t closest = members.front();
            double bestd = std::numeric_limits<double>::max();
            for (auto m : members) {
                const double d = distance(topo.positions[m], centroids[c]);
                if (d < bestd) {
                    bestd = d;
                    closest = m;
                }
            }
            for (const auto& comp : comps) {
                const bool is_core =
                    std::find(comp.begin(), comp.end(), closest) != comp.end();
                for (auto m : comp) {
                    if (is_core) {
                        in_core[m] = 1;
                    } else {
                        stragglers.push_back(m);
                    }
                }
            }
        }
        std::sort(stragglers.begin(), stragglers.end());
        return stragglers;
    };

    for (int round = 0; round < 32; ++round) {
        auto stragglers = core_pass();
        if (stragglers.empty()) break;
        bool progress = false;
        for (auto m : stragglers) {
            std::uint32_t best_cluster = assign[m];
            double best_d = std::numeric_limits<double>::max();
            bool found = false;
            for (std::uint32_t v : topo.graph.neighbors[m]) {
                if (!in_core[v]) continue;
                const double d = distance(topo.positions[m], centroids[assign[v]]);
                if (d < best_d) {
                    best_d = d;
                    best_cluster = assign[v];
                    found = true;
                }
            }
            if (found) {
                assign[m] = best_cluster;
                in_core[m] = 1;  // attached to a core via v
                progress = true;
            }
        }
        if (!progress) break;  // leftovers become isolated
    }
    auto leftover = core_pass();  // final core flags; anything left is isolated

    ClusterPlan plan;
    plan.clusters.resize(n_clusters);
    plan.cluster_of.assign(n, 0);
    for (std::uint32_t i = 0; i < n; ++i) {
        plan.cluster_of[i] = assign[i];
        plan.clusters[assign[i]].members.push_back(ClientId{i});
        if (!in_core[i]) plan.clusters[assign[i]].isolated.insert(ClientId{i});
    }
    recompute_centroids();
    for (std::size_t c = 0; c < n_clusters; ++c) {
        auto& cl = plan.clusters[c];
        std::sort(cl.members.begin(), cl.members.end());
        cl.centroid = centroids[c];
        if (cl.members.empty()) throw ClusterInfeasible("cluster " + std::to_string(c) + " is empty");

        // server adjacency: sampled among non-isolated members
        std::vector<ClientId> eligible;
        for (auto m : cl.members) {
            if (!cl.isolated.count(m)) eligible.push_back(m);
        }
        if (eligible.empty()) {
            throw ClusterInfeasible("cluster " + std::to_string(c) + " has no connected core");
        }
        std::size_t want = 0;
        if (server_adjacent_fraction > 0.0) {
            want = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(server_adjacent_fraction *
                                                         static_cast<double>(eligible.size()))));
        }
        if (want == 0) {
            throw ClusterInfeasible("cluster " + std::to_string(c) +
                                    " has no server-adjacent member, no leader candidate");
        }
        std::vector<ClientId> pool = eligible;
        rng.shuffle(pool);
        for (std::size_t i = 0; i < want && i < pool.size(); ++i) {
            cl.server_adjacent.insert(pool[i]);
        }
        // leader: uniform among server-adjacent members
        std::vector<ClientId> candidates(cl.server_adjacent.begin(), cl.server_adjacent.end());
        cl.leader = candidates[rng.index(candidates.size())];
    }
    return plan;
}

// Mark ceil(fraction * z_h) members of each cluster as this round's targets.
// The leader is always a target; isolated members never are.
inline ClusterPlan mark_targets(ClusterPlan plan, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("target fraction must be in (0, 1]");
    Rng rng(seed);
    for (auto& cl : plan.clusters) {
        cl.targets.clear();
        std::vector<ClientId> eligible;
        for (auto m : cl.members) {
            if (m != cl.leader && !cl.isolated.count(m)) eligible.push_back(m);
        }
        std::size_t want = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(cl.members.size())));
        want = std::clamp<std::size_t>(want, 1, eligible.size() + 1);
        cl.targets.insert(cl.leader);
        rng.shuffle(eligible);
        for (std::size_t i = 0; i + 1 < want && i < eligible.size(); ++i) {
            cl.targets.insert(eligible[i]);
        }
    }
    return plan;
}

// Edge list as CSV ("a,b" per line) for plotting.
inline std::string edges_csv(const NetworkTopology& topo) {
    std::ostringstream out;
    out << "a,b\n";
    for (const auto& [a, b] : topo.edges) out << a << "," << b << "\n";
    return out.str();
}

// Companion node table: position, cluster, role flags.
inline std::string nodes_csv(const NetworkTopology& topo, const ClusterPlan* plan = nullptr) {
    std::ostringstream out;
    out << "id,x,y,cluster,target,leader,server_adjacent\n";
    for (std::uint32_t i = 0; i < topo.client_count(); ++i) {
        out << i << "," << topo.positions[i].x << "," << topo.positions[i].y;
        if (plan) {
            const auto& cl = plan->clusters[plan->cluster_of[i]];
            out << "," << plan->cluster_of[i] << "," << cl.is_target(ClientId{i})
                << "," << (cl.leader == ClientId{i}) << "," << cl.server_adjacent.count(ClientId{i});
        } else {
            out << ",,,,";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace cfl
