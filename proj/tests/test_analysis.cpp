#include "catch_amalgamated.hpp"

#include <set>

#include "cfl/analysis.hpp"

using namespace cfl;

// Frozen against a high-precision evaluation of ln(n) - ln(-ln(p)):
//   n=40,  p=0.999 -> 10.5961  (ceil 11)
//   n=100, p=0.999 -> 11.5124  (ceil 12)
//   n=50   p=0.99  ->  8.5122  (ceil 9)
//   n=100  p=0.99  ->  9.2053  (ceil 10)
//   n=500  p=0.99  -> 10.8148  (ceil 11)
TEST_CASE("ring size matches the threshold formula", "[analysis]") {
    REQUIRE(ring_size(40, 0.999) == 11);
    REQUIRE(ring_size(100, 0.999) == 12);
    REQUIRE(ring_size(50, 0.99) == 9);
    REQUIRE(ring_size(100, 0.99) == 10);
    REQUIRE(ring_size(500, 0.99) == 11);
}

TEST_CASE("ring size domain and clamping", "[analysis]") {
    REQUIRE_THROWS_AS(ring_size(100, 1.0), DomainError);
    REQUIRE_THROWS_AS(ring_size(100, 0.0), DomainError);
    REQUIRE_THROWS_AS(ring_size(100, -0.5), DomainError);
    REQUIRE_THROWS_AS(ring_size(1, 0.99), DomainError);
    // extreme demand on a tiny cluster clamps to n-1
    REQUIRE(ring_size(3, 0.9999999999) == 2);
}

TEST_CASE("edge probability matches the threshold formula", "[analysis]") {
    REQUIRE_THAT(edge_probability(100, 0.999),
                 Catch::Matchers::WithinAbs(0.11512, 1e-5));
    // decreasing in n for fixed p
    REQUIRE(edge_probability(1000, 0.999) < edge_probability(100, 0.999));
    // clamp case
    REQUIRE(edge_probability(2, 0.9999999999) == 1.0);
}

TEST_CASE("ring size is monotone in the connectivity demand", "[analysis]") {
    const std::size_t n = 80;
    REQUIRE(ring_size(n, 0.9) < ring_size(n, 0.99));
    REQUIRE(ring_size(n, 0.99) < ring_size(n, 0.9999));
}

TEST_CASE("ring size is consistent with n times the edge probability", "[analysis]") {
    for (std::size_t n : {50u, 100u, 500u}) {
        const double expected = static_cast<double>(n) * edge_probability(n, 0.99);
        REQUIRE(std::abs(static_cast<double>(ring_size(n, 0.99)) - expected) <= 1.0);
    }
}

TEST_CASE("regular graph sampler hits the requested degree", "[analysis]") {
    Rng rng(99);
    for (auto [n, m] : std::vector<std::pair<std::size_t, std::size_t>>{
             {10, 3}, {40, 11}, {20, 19}, {30, 20}, {9, 2}}) {
        AdjacencyList g = sample_regular_graph(n, m, rng);
        REQUIRE(g.size() == n);
        std::size_t off_degree = 0;
        for (const auto& nb : g.neighbors) {
            std::set<std::uint32_t> uniq(nb.begin(), nb.end());
            REQUIRE(uniq.size() == nb.size());  // simple graph
            if (nb.size() != m) off_degree++;
        }
        // odd n*m leaves exactly one vertex off by one
        REQUIRE(off_degree <= ((n * m) % 2 == 1 ? 1u : 0u));
    }
    REQUIRE_THROWS_AS(sample_regular_graph(10, 10, rng), RingInfeasible);
}

TEST_CASE("monte carlo degenerate cases", "[analysis]") {
    REQUIRE(monte_carlo_connectivity(30, GraphModel::ErdosRenyi, 1.0, 50, 1) == 1.0);
    REQUIRE(monte_carlo_connectivity(30, GraphModel::ErdosRenyi, 0.0, 50, 1) == 0.0);
    REQUIRE_THROWS_AS(monte_carlo_connectivity(30, GraphModel::ErdosRenyi, 0.5, 0, 1),
                      DomainError);
}

TEST_CASE("threshold edge probability delivers the asked-for connectivity", "[analysis][slow]") {
    const double r = edge_probability(1000, 0.99);
    const double empirical =
        monte_carlo_connectivity(1000, GraphModel::ErdosRenyi, r, 1000, 0x5EED);
    REQUIRE(empirical >= 0.97);
    REQUIRE(empirical <= 1.0);
}

TEST_CASE("connectivity sweep rows carry both graph models", "[analysis]") {
    ConnectivityRow row = connectivity_sweep_point(50, 0.99, 200, 7);
    REQUIRE(row.m_h == 9);
    REQUIRE(row.empirical_ring >= 0.9);
    REQUIRE(row.trials == 200);
    const std::string csv = to_csv(row);
    REQUIRE(csv.find("50,0.99,9,") == 0);
}
