#include "catch_amalgamated.hpp"

#include <set>

#include "cfl/topology.hpp"

using namespace cfl;

TEST_CASE("single client has no edges", "[topology]") {
    auto topo = generate_topology(1, 50.0, 10.0, 1);
    REQUIRE(topo.client_count() == 1);
    REQUIRE(topo.edges.empty());
}

TEST_CASE("coincident clients are connected at any positive range", "[topology]") {
    // area side zero forces both points onto the origin
    auto topo = generate_topology(2, 0.0, 1.0, 7);
    REQUIRE(topo.edges.size() == 1);
    REQUIRE(topo.has_edge(ClientId{0}, ClientId{1}));
    REQUIRE_FALSE(topo.has_edge(ClientId{0}, ClientId{0}));
}

// Range 13.41 was calibrated by Monte Carlo over 100 seeds to give a mean
// degree of ~10 on 200 clients in a 100x100 square (mean edge count 996).
TEST_CASE("calibrated sparse scenario lands near 1000 edges", "[topology]") {
    auto topo = generate_topology(200, 100.0, 13.41, 42);
    REQUIRE(topo.edges.size() >= 800);
    REQUIRE(topo.edges.size() <= 1200);
}

TEST_CASE("generation is deterministic per seed", "[topology]") {
    auto a = generate_topology(120, 80.0, 12.0, 2024);
    auto b = generate_topology(120, 80.0, 12.0, 2024);
    REQUIRE(a.edges == b.edges);
    REQUIRE(edges_csv(a) == edges_csv(b));
    REQUIRE(nodes_csv(a) == nodes_csv(b));
    auto c = generate_topology(120, 80.0, 12.0, 2025);
    REQUIRE(a.edges != c.edges);
}

TEST_CASE("bad generation inputs are rejected", "[topology]") {
    REQUIRE_THROWS_AS(generate_topology(0, 10.0, 1.0, 1), ConfigError);
    REQUIRE_THROWS_AS(generate_topology(5, 10.0, 0.0, 1), ConfigError);
}

TEST_CASE("one cluster swallows a complete graph", "[topology]") {
    auto topo = generate_topology(10, 1.0, 5.0, 3);  // tiny area: complete
    REQUIRE(topo.edges.size() == 45);
    auto plan = divide_clusters(topo, 1, 3);
    REQUIRE(plan.clusters.size() == 1);
    REQUIRE(plan.clusters[0].members.size() == 10);
    REQUIRE(plan.clusters[0].isolated.empty());
    REQUIRE(plan.clusters[0].server_adjacent.count(plan.clusters[0].leader) == 1);
}

TEST_CASE("two spatial components become the two clusters", "[topology]") {
    // two tight groups 1000 apart; range covers within-group distances only
    NetworkTopology topo;
    topo.range = 30.0;
    for (int i = 0; i < 6; ++i) topo.positions.push_back({double(i), 0.0});
    for (int i = 0; i < 6; ++i) topo.positions.push_back({1000.0 + i, 0.0});
    topo.graph = AdjacencyList(12);
    for (std::uint32_t a = 0; a < 12; ++a) {
        for (std::uint32_t b = a + 1; b < 12; ++b) {
            if (distance(topo.positions[a], topo.positions[b]) <= topo.range) {
                topo.graph.add_edge(a, b);
                topo.edges.emplace_back(a, b);
            }
        }
    }
    auto plan = divide_clusters(topo, 2, 11);
    REQUIRE(plan.clusters.size() == 2);
    std::set<std::uint32_t> first;
    for (auto id : plan.clusters[0].members) first.insert(id.value);
    const bool left = first.count(0) == 1;
    for (std::uint32_t i = 0; i < 6; ++i) REQUIRE(first.count(i) == (left ? 1 : 0));
    for (std::uint32_t i = 6; i < 12; ++i) REQUIRE(first.count(i) == (left ? 0 : 1));
}

TEST_CASE("clusters partition the clients and stay connected", "[topology]") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull}) {
        auto topo = generate_topology(150, 100.0, 16.0, seed);
        auto plan = divide_clusters(topo, 4, seed);
        // partition property
        std::set<std::uint32_t> seen;
        for (const auto& cl : plan.clusters) {
            for (auto id : cl.members) REQUIRE(seen.insert(id.value).second);
        }
        REQUIRE(seen.size() == 150);
        // connectivity property over the non-isolated members
        for (const auto& cl : plan.clusters) {
            std::vector<std::uint32_t> core;
            for (auto id : cl.members) {
                if (!cl.isolated.count(id)) core.push_back(id.value);
            }
            REQUIRE_FALSE(core.empty());
            auto comps = components(topo.graph, core);
            REQUIRE(comps.size() == 1);
        }
    }
}

TEST_CASE("cluster division is deterministic", "[topology]") {
    auto topo = generate_topology(100, 100.0, 15.0, 5);
    auto a = divide_clusters(topo, 3, 17);
    auto b = divide_clusters(topo, 3, 17);
    REQUIRE(a.cluster_of == b.cluster_of);
    for (std::size_t c = 0; c < 3; ++c) {
        REQUIRE(a.clusters[c].members == b.clusters[c].members);
        REQUIRE(a.clusters[c].leader == b.clusters[c].leader);
        REQUIRE(a.clusters[c].server_adjacent == b.clusters[c].server_adjacent);
    }
}

TEST_CASE("no server adjacency means no leader candidate", "[topology]") {
    auto topo = generate_topology(30, 10.0, 20.0, 9);
    REQUIRE_THROWS_AS(divide_clusters(topo, 2, 9, 0.0), ClusterInfeasible);
}

TEST_CASE("more clusters than clients is rejected", "[topology]") {
    auto topo = generate_topology(3, 10.0, 20.0, 9);
    REQUIRE_THROWS_AS(divide_clusters(topo, 4, 9), ConfigError);
}

TEST_CASE("target marking spans the fractions", "[topology]") {
    auto topo = generate_topology(200, 100.0, 14.0, 21);
    auto plan = divide_clusters(topo, 5, 21);

    auto full = mark_targets(plan, 1.0, 3);
    for (const auto& cl : full.clusters) {
        REQUIRE(cl.targets.size() + cl.isolated.size() == cl.members.size());
        REQUIRE(cl.targets.count(cl.leader) == 1);
    }

    auto half = mark_targets(plan, 0.5, 3);
    std::size_t total = 0;
    for (const auto& cl : half.clusters) {
        total += cl.targets.size();
        REQUIRE(cl.targets.size() >= (cl.members.size() + 1) / 2);
        REQUIRE(cl.targets.count(cl.leader) == 1);
    }
    REQUIRE(total >= 100);
    REQUIRE(total <= 105);  // per-cluster ceils only

    auto sliver = mark_targets(plan, 1e-9, 3);
    for (const auto& cl : sliver.clusters) {
        REQUIRE(cl.targets.size() == 1);
        REQUIRE(cl.targets.count(cl.leader) == 1);
    }

    REQUIRE_THROWS_AS(mark_targets(plan, 0.0, 3), ConfigError);
    REQUIRE_THROWS_AS(mark_targets(plan, 1.5, 3), ConfigError);
}

TEST_CASE("csv exports carry the expected headers", "[topology]") {
    auto topo = generate_topology(5, 10.0, 8.0, 2);
    auto plan = divide_clusters(topo, 1, 2);
    REQUIRE(edges_csv(topo).rfind("a,b\n", 0) == 0);
    REQUIRE(nodes_csv(topo, &plan).rfind("id,x,y,cluster,target,leader,server_adjacent\n", 0) == 0);
}
