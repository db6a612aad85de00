#pragma once

// Declarative experiment configuration and scenario construction. Every
// tunable lives in ExperimentConfig, every random choice has an explicit
// seed, and the config round-trips losslessly through JSON, so a run is
// reproducible from its config file alone.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfl/analysis.hpp"
#include "cfl/core.hpp"
#include "cfl/keying.hpp"
#include "cfl/simnet.hpp"
#include "cfl/topology.hpp"
#include "cfl/trainer.hpp"

namespace cfl {

enum class TopologyKind { Uniform, Blobs };

struct Seeds {
    std::uint64_t topology{1};
    std::uint64_t clusters{2};
    std::uint64_t targets{3};
    std::uint64_t pool{4};
    std::uint64_t nonce{5};
    std::uint64_t ppt_pool{6};
    std::uint64_t ppt_nonce{7};
    std::uint64_t data{8};
    std::uint64_t dropout{9};
    std::uint64_t sim{10};
    bool operator==(const Seeds&) const = default;
};

struct ExperimentConfig {
    // topology
    TopologyKind topology_kind{TopologyKind::Uniform};
    std::size_t n_clients{200};
    double area_side{100.0};
    double range{13.41};
    double blob_radius{5.0};      // blobs layout only
    double blob_spacing{1000.0};  // blobs layout only
    std::size_t n_clusters{5};
    double target_fraction{0.5};
    double server_adjacent_fraction{0.1};

    // keying
    std::size_t ring_size_override{0};      // 0 = derive per cluster from p_c
    std::size_t ppt_ring_size_override{0};  // 0 = same policy over the global pool
    double p_c{0.999};
    MatchingModel matching{MatchingModel::Uniform};
    std::size_t vote_threshold_override{0};  // 0 = majority of ring size
    std::size_t rekey_period_rounds{0};

    // crypto
    std::size_t kappa_bits{128};
    std::uint64_t stamp_window_ms{30000};

    // trainer
    std::size_t dim{64};
    double learning_rate{0.1};
    std::size_t local_epochs{1};
    double shard_mean{600.0};
    double shard_spread{100.0};
    bool spread_is_stddev{true};

    // aggregation / simulation
    ArithmeticMode mode{ArithmeticMode::Fixed};
    double mask_bound{1000.0};
    std::uint64_t latency_ms{10};
    std::uint64_t ack_timeout_ms{50};
    bool instrument{false};
    bool count_model_distribution{true};

    // run control
    Protocol protocol{Protocol::Cfl};
    std::size_t rounds{10};
    double convergence_epsilon{1e-4};

    // faults
    double dropout_fraction{0.0};
    DropoutDetection detection{DropoutDetection::Announce};
    std::vector<std::pair<std::uint32_t, std::string>> hijacked;  // (client, script)

    Seeds seeds;

    bool operator==(const ExperimentConfig&) const = default;
};

// ---- json (stable key order) ---------------------------------------------------

using Json = nlohmann::ordered_json;

inline std::string to_string(TopologyKind k) { return k == TopologyKind::Uniform ? "uniform" : "blobs"; }
inline std::string to_string(MatchingModel m) {
    return m == MatchingModel::Uniform ? "uniform" : "range_limited";
}
inline std::string to_string(DropoutDetection d) {
    return d == DropoutDetection::Announce ? "announce" : "timeout";
}

namespace detail {

template <typename T>
T parse_enum(const std::string& s, const std::vector<std::pair<std::string, T>>& table,
             const char* what) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    throw ConfigError(std::string("unknown ") + what + ": " + s);
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
    Json j;
    j["topology"] = {{"kind", to_string(c.topology_kind)},
                     {"n_clients", c.n_clients},
                     {"area_side", c.area_side},
                     {"range", c.range},
                     {"blob_radius", c.blob_radius},
                     {"blob_spacing", c.blob_spacing},
                     {"n_clusters", c.n_clusters},
                     {"target_fraction", c.target_fraction},
                     {"server_adjacent_fraction", c.server_adjacent_fraction}};
    j["keying"] = {{"ring_size_override", c.ring_size_override},
                   {"ppt_ring_size_override", c.ppt_ring_size_override},
                   {"p_c", c.p_c},
                   {"matching", to_string(c.matching)},
                   {"vote_threshold_override", c.vote_threshold_override},
                   {"rekey_period_rounds", c.rekey_period_rounds}};
    j["crypto"] = {{"kappa_bits", c.kappa_bits}, {"stamp_window_ms", c.stamp_window_ms}};
    j["trainer"] = {{"dim", c.dim},
                    {"learning_rate", c.learning_rate},
                    {"local_epochs", c.local_epochs},
                    {"shard_mean", c.shard_mean},
                    {"shard_spread", c.shard_spread},
                    {"spread_is_stddev", c.spread_is_stddev}};
    j["simulation"] = {{"mode", std::string(to_string(c.mode))},
                       {"mask_bound", c.mask_bound},
                       {"latency_ms", c.latency_ms},
                       {"ack_timeout_ms", c.ack_timeout_ms},
                       {"instrument", c.instrument},
                       {"count_model_distribution", c.count_model_distribution}};
    j["run"] = {{"protocol", std::string(to_string(c.protocol))},
                {"rounds", c.rounds},
                {"convergence_epsilon", c.convergence_epsilon}};
    Json hijacked = Json::array();
    for (const auto& [id, script] : c.hijacked) hijacked.push_back({{"client", id}, {"script", script}});
    j["faults"] = {{"dropout_fraction", c.dropout_fraction},
                   {"detection", to_string(c.detection)},
                   {"hijacked", hijacked}};
    j["seeds"] = {{"topology", c.seeds.topology}, {"clusters", c.seeds.clusters},
                  {"targets", c.seeds.targets},  {"pool", c.seeds.pool},
                  {"nonce", c.seeds.nonce},      {"ppt_pool", c.seeds.ppt_pool},
                  {"ppt_nonce", c.seeds.ppt_nonce}, {"data", c.seeds.data},
                  {"dropout", c.seeds.dropout},  {"sim", c.seeds.sim}};
    return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
    try {
        ExperimentConfig c;
        const auto& t = j.at("topology");
        c.topology_kind = detail::parse_enum<TopologyKind>(
            t.at("kind"), {{"uniform", TopologyKind::Uniform}, {"blobs", TopologyKind::Blobs}},
            "topology kind");
        c.n_clients = t.at("n_clients");
        c.area_side = t.at("area_side");
        c.range = t.at("range");
        c.blob_radius = t.at("blob_radius");
        c.blob_spacing = t.at("blob_spacing");
        c.n_clusters = t.at("n_clusters");
        c.target_fraction = t.at("target_fraction");
        c.server_adjacent_fraction = t.at("server_adjacent_fraction");
        const auto& k = j.at("keying");
        c.ring_size_override = k.at("ring_size_override");
        c.ppt_ring_size_override = k.at("ppt_ring_size_override");
        c.p_c = k.at("p_c");
        c.matching = detail::parse_enum<MatchingModel>(
            k.at("matching"),
            {{"uniform", MatchingModel::Uniform}, {"range_limited", MatchingModel::RangeLimited}},
            "matching model");
        c.vote_threshold_override = k.at("vote_threshold_override");
        c.rekey_period_rounds = k.at("rekey_period_rounds");
        const auto& cr = j.at("crypto");
        c.kappa_bits = cr.at("kappa_bits");
        c.stamp_window_ms = cr.at("stamp_window_ms");
        const auto& tr = j.at("trainer");
        c.dim = tr.at("dim");
        c.learning_rate = tr.at("learning_rate");
        c.local_epochs = tr.at("local_epochs");
        c.shard_mean = tr.at("shard_mean");
        c.shard_spread = tr.at("shard_spread");
        c.spread_is_stddev = tr.at("spread_is_stddev");
        const auto& s = j.at("simulation");
        c.mode = detail::parse_enum<ArithmeticMode>(
            s.at("mode"), {{"fixed", ArithmeticMode::Fixed}, {"float", ArithmeticMode::Float}},
            "arithmetic mode");
        c.mask_bound = s.at("mask_bound");
        c.latency_ms = s.at("latency_ms");
        c.ack_timeout_ms = s.at("ack_timeout_ms");
        c.instrument = s.at("instrument");
        c.count_model_distribution = s.at("count_model_distribution");
        const auto& r = j.at("run");
        c.protocol = detail::parse_enum<Protocol>(
            r.at("protocol"), {{"cfl", Protocol::Cfl}, {"ppt", Protocol::Ppt}}, "protocol");
        c.rounds = r.at("rounds");
        c.convergence_epsilon = r.at("convergence_epsilon");
        const auto& f = j.at("faults");
        c.dropout_fraction = f.at("dropout_fraction");
        c.detection = detail::parse_enum<DropoutDetection>(
            f.at("detection"),
            {{"announce", DropoutDetection::Announce}, {"timeout", DropoutDetection::Timeout}},
            "dropout detection");
        for (const auto& h : f.at("hijacked")) {
            c.hijacked.emplace_back(h.at("client").get<std::uint32_t>(),
                                    h.at("script").get<std::string>());
        }
        const auto& sd = j.at("seeds");
        c.seeds.topology = sd.at("topology");
        c.seeds.clusters = sd.at("clusters");
        c.seeds.targets = sd.at("targets");
        c.seeds.pool = sd.at("pool");
        c.seeds.nonce = sd.at("nonce");
        c.seeds.ppt_pool = sd.at("ppt_pool");
        c.seeds.ppt_nonce = sd.at("ppt_nonce");
        c.seeds.data = sd.at("data");
        c.seeds.dropout = sd.at("dropout");
        c.seeds.sim = sd.at("sim");
        return c;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
}

inline AttackScript parse_attack_script(const std::string& s) {
    return detail::parse_enum<AttackScript>(s, {{"tamper", AttackScript::Tamper},
                                                {"impersonate", AttackScript::Impersonate},
                                                {"replay", AttackScript::Replay},
                                                {"eavesdrop", AttackScript::EavesdropLog}},
                                            "attack script");
}

// ---- scenario construction -------------------------------------------------------

// Blob layout: n_clusters tight discs far apart, so every cluster's range
// graph is complete and clusters are unambiguous. Used by the table-anchor
// scenarios.
inline NetworkTopology generate_blob_topology(std::size_t n_clients, std::size_t n_clusters,
                                              double blob_radius, double blob_spacing,
                                              double range, std::uint64_t seed) {
    if (n_clusters < 1 || n_clients < n_clusters) throw ConfigError("bad blob layout");
    NetworkTopology topo;
    topo.range = range;
    topo.positions.resize(n_clients);
    Rng rng(seed);
    for (std::size_t i = 0; i < n_clients; ++i) {
        const std::size_t blob = i % n_clusters;
        const double cx = blob_spacing * (static_cast<double>(blob) + 0.5);
        const double angle = rng.uniform(0.0, 6.283185307179586);
        const double radius = blob_radius * std::sqrt(rng.uniform());
        topo.positions[i] = {cx + radius * std::cos(angle),
                             blob_spacing * 0.5 + radius * std::sin(angle)};
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

struct BuiltScenario {
    NetworkTopology topo;
    ClusterPlan plan;
    KeyRingMap rings;
    CommKeyTable table;
    std::map<ClientId, std::uint64_t> sizes;
    SyntheticTask task;
    std::map<ClientId, DatasetShard> shards;  // per target
    std::size_t m_h{0};                       // largest ring parameter in use
    std::optional<PptContext> ppt;
};

inline std::size_t cluster_ring_size(const ExperimentConfig& cfg, std::size_t z_h) {
    if (cfg.ring_size_override > 0) return std::min(cfg.ring_size_override, z_h - 1);
    if (z_h < 2) return 1;
    return ring_size(z_h, cfg.p_c);
}

// One-cluster plan over every client, used for the PPT baseline's global key
// establishment.
inline ClusterPlan global_plan(const ClusterPlan& plan, std::size_t n_clients) {
    ClusterPlan g;
    g.clusters.resize(1);
    auto& cl = g.clusters[0];
    for (std::uint32_t i = 0; i < n_clients; ++i) cl.members.push_back(ClientId{i});
    for (const auto& c : plan.clusters) {
        for (auto id : c.server_adjacent) cl.server_adjacent.insert(id);
        for (auto id : c.targets) cl.targets.insert(id);
        for (auto id : c.isolated) cl.isolated.insert(id);
    }
    cl.leader = plan.clusters.front().leader;
    g.cluster_of.assign(n_clients, 0);
    return g;
}

inline BuiltScenario build_scenario(const ExperimentConfig& cfg, bool with_ppt,
                                    bool with_comm_keys = true) {
    if (cfg.kappa_bits != 128) throw UnsupportedKeyLength("kappa must be 128");
    BuiltScenario sc;
    sc.topo = cfg.topology_kind == TopologyKind::Uniform
                  ? generate_topology(cfg.n_clients, cfg.area_side, cfg.range, cfg.seeds.topology)
                  : generate_blob_topology(cfg.n_clients, cfg.n_clusters, cfg.blob_radius,
                                           cfg.blob_spacing, cfg.range, cfg.seeds.topology);
    sc.plan = divide_clusters(sc.topo, cfg.n_clusters, cfg.seeds.clusters,
                              cfg.server_adjacent_fraction);
    sc.plan = mark_targets(sc.plan, cfg.target_fraction, cfg.seeds.targets);

    // per-cluster ring sizes may differ; predistribute one cluster at a time
    sc.m_h = 1;
    for (std::size_t c = 0; c < sc.plan.clusters.size(); ++c) {
        ClusterPlan one;
        one.clusters.push_back(sc.plan.clusters[c]);
        one.cluster_of = sc.plan.cluster_of;
        const std::size_t m = cluster_ring_size(cfg, sc.plan.clusters[c].size());
        sc.m_h = std::max(sc.m_h, m);
        auto part = predistribute_keyrings(one, m, mix_seed(cfg.seeds.pool, c), cfg.matching,
                                           &sc.topo);
        for (auto& [id, ring] : part) sc.rings[id] = std::move(ring);
    }
    if (with_comm_keys) {
        sc.table = establish_comm_keys(sc.plan, sc.rings, cfg.seeds.nonce);
    }

    // data
    sc.task = SyntheticTask::make(cfg.dim, cfg.seeds.data);
    std::vector<ClientId> targets;
    for (const auto& cl : sc.plan.clusters) {
        for (auto id : cl.targets) targets.push_back(id);
    }
    std::sort(targets.begin(), targets.end());
    auto shards = shard_dataset(targets, cfg.shard_mean, cfg.shard_spread, cfg.spread_is_stddev,
                                sc.task, cfg.seeds.data);
    for (auto& shard : shards) {
        sc.sizes[shard.owner] = shard.size();
        sc.shards[shard.owner] = std::move(shard);
    }

    if (with_ppt) {
        // The baseline keeps its own key layout: neighbor-pairwise keys over
        // the range graph, or a uniform global matching when an explicit ring
        // size is forced (the complete-graph anchor uses that).
        PptContext ppt;
        ClusterPlan gp = global_plan(sc.plan, cfg.n_clients);
        if (cfg.ppt_ring_size_override > 0) {
            const std::size_t m = std::min(cfg.ppt_ring_size_override, cfg.n_clients - 1);
            ppt.rings = predistribute_keyrings(gp, m, cfg.seeds.ppt_pool, MatchingModel::Uniform,
                                               &sc.topo);
        } else {
            ppt.rings = neighbor_rings(sc.topo, cfg.seeds.ppt_pool);
        }
        if (with_comm_keys) {
            ppt.table = establish_comm_keys(gp, ppt.rings, cfg.seeds.ppt_nonce);
        }
        // global leader: a server-adjacent target
        Rng rng(cfg.seeds.ppt_pool ^ 0x11EAD3ull);
        std::vector<ClientId> candidates;
        for (auto id : gp.clusters[0].server_adjacent) {
            if (gp.clusters[0].targets.count(id)) candidates.push_back(id);
        }
        if (candidates.empty()) throw ClusterInfeasible("no server-adjacent target for PPT leader");
        ppt.leader = candidates[rng.index(candidates.size())];
        sc.ppt = std::move(ppt);
    }
    return sc;
}

inline Simulation make_simulation(const ExperimentConfig& cfg, BuiltScenario& sc) {
    SimParams params;
    params.mode = cfg.mode;
    params.dim = cfg.dim;
    params.mask_bound = cfg.mask_bound;
    params.latency_ms = cfg.latency_ms;
    params.ack_timeout_ms = cfg.ack_timeout_ms;
    params.stamp_window_ms = cfg.stamp_window_ms;
    if (cfg.vote_threshold_override > 0) params.vote_threshold = cfg.vote_threshold_override;
    params.rekey_period_rounds = cfg.rekey_period_rounds;
    params.instrument = cfg.instrument;
    params.count_model_distribution = cfg.count_model_distribution;

    FaultPlan faults;
    faults.dropout_fraction = cfg.dropout_fraction;
    faults.dropout_seed = cfg.seeds.dropout;
    faults.detection = cfg.detection;
    for (const auto& [id, script] : cfg.hijacked) {
        faults.hijacked[ClientId{id}] = parse_attack_script(script);
    }

    Simulation sim(sc.topo, sc.plan, sc.rings, sc.table, sc.sizes, sc.m_h, params, faults,
                   cfg.seeds.sim);
    if (sc.ppt) sim.attach_ppt(*sc.ppt);
    return sim;
}

// Feasibility screen for sparse scenarios: every cluster's live-target ring
// graph and the global target ring graph must be connected (checked on the
// matching itself, before any crypto work).
inline bool scenario_routable(const BuiltScenario& sc) {
    auto ring_graph = [&](const KeyRingMap& rings, const std::vector<ClientId>& verts) {
        AdjacencyList g(verts.size());
        std::map<ClientId, std::uint32_t> idx;
        for (std::uint32_t i = 0; i < verts.size(); ++i) idx[verts[i]] = i;
        for (std::uint32_t i = 0; i < verts.size(); ++i) {
            auto it = rings.find(verts[i]);
            if (it == rings.end()) continue;
            for (const auto& e : it->second.entries) {
                auto jt = idx.find(e.peer);
                if (jt != idx.end() && jt->second > i) g.add_edge(i, jt->second);
            }
        }
        return g;
    };
    std::set<ClientId> all_targets;
    for (const auto& cl : sc.plan.clusters) {
        std::vector<ClientId> verts(cl.targets.begin(), cl.targets.end());
        for (auto id : verts) all_targets.insert(id);
        if (!is_connected(ring_graph(sc.rings, verts))) return false;
    }
    if (sc.ppt) {
        // the baseline cycle may relay through non-targets, so it only needs
        // every target in one component of its key graph
        std::vector<ClientId> everyone;
        for (std::uint32_t i = 0; i < sc.topo.client_count(); ++i) everyone.push_back(ClientId{i});
        AdjacencyList g = ring_graph(sc.ppt->rings, everyone);
        const auto seen = bfs_reach(g, sc.ppt->leader.value);
        for (auto id : all_targets) {
            if (!seen[id.value]) return false;
        }
    }
    return true;
}

}  // namespace cfl
