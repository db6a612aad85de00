#pragma once

// Experiment harness: drives training rounds through the simulation and
// collects the CSV/JSONL artifacts. One experiment is one process-level run
// of the high-level protocol: train, aggregate per cluster, combine, update,
// repeat until the update norm falls under the convergence threshold.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cfl/scenario.hpp"
#include "cfl/simnet.hpp"
#include "cfl/trainer.hpp"

namespace cfl {

struct ExperimentResult {
    std::vector<RoundReport> rounds;
    ModelVector final_model;
    bool converged{false};
    std::size_t rounds_run{0};

    std::string rounds_csv() const {
        std::string out = round_csv_header();
        for (const auto& r : rounds) out += to_csv(r);
        return out;
    }

    std::string trace_jsonl() const {
        std::string out;
        for (const auto& r : rounds) out += to_jsonl(r);
        return out;
    }
};

// Local updates for every target this round (the simulation picks the live
// subset). Training is deterministic per (data seed, round, client).
inline std::map<ClientId, ModelVector> compute_round_updates(const ExperimentConfig& cfg,
                                                             const BuiltScenario& sc,
                                                             const ModelVector& global,
                                                             std::uint32_t round) {
    std::map<ClientId, ModelVector> updates;
    for (const auto& [id, shard] : sc.shards) {
        const ModelVector w = local_train(global, shard, cfg.local_epochs, cfg.learning_rate,
                                          mix_seed(cfg.seeds.data, mix_seed(round, id.value)));
        updates[id] = compute_update(w, global);
    }
    return updates;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, BuiltScenario& sc,
                                       Simulation& sim) {
    ExperimentResult result;
    ModelVector w(cfg.dim);
    for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
        auto updates = compute_round_updates(cfg, sc, w, t);
        RoundReport report = sim.run_round(cfg.protocol, t, updates);
        const ModelVector next = global_update(w, report.global_sum);
        report.update_norm = report.global_sum.norm() / std::max(1.0, w.norm());
        w = next;
        report.global_model = w;
        const double norm = report.update_norm;
        result.rounds.push_back(std::move(report));
        result.rounds_run = t + 1;
        if (norm < cfg.convergence_epsilon) {
            result.converged = true;
            break;
        }
    }
    result.final_model = w;
    return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    BuiltScenario sc = build_scenario(cfg, cfg.protocol == Protocol::Ppt);
    Simulation sim = make_simulation(cfg, sc);
    return run_experiment(cfg, sc, sim);
}

// ---- canned scenarios ----------------------------------------------------------

// Table-anchor layout: five far-apart discs of twenty clients, everyone a
// target, complete rings. CFL spends n_h hops per cluster plus one upload per
// leader; the baseline spends one global cycle plus a single upload.
inline ExperimentConfig anchor_config() {
    ExperimentConfig cfg;
    cfg.topology_kind = TopologyKind::Blobs;
    cfg.n_clients = 100;
    cfg.n_clusters = 5;
    cfg.blob_radius = 5.0;
    cfg.blob_spacing = 1000.0;
    cfg.range = 15.0;
    cfg.target_fraction = 1.0;
    cfg.server_adjacent_fraction = 0.1;
    cfg.ring_size_override = 19;      // z_h - 1: complete intra-cluster key graphs
    cfg.ppt_ring_size_override = 99;  // complete global key graph for the baseline
    cfg.dim = 16;
    cfg.shard_mean = 600.0;
    cfg.shard_spread = 100.0;
    cfg.rounds = 1;
    cfg.seeds.topology = 42;
    return cfg;
}

// Sparse geometric shape: 200 potential clients, half of them targets, five
// clusters, mean range degree about 10.
inline ExperimentConfig sparse_config(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.topology_kind = TopologyKind::Uniform;
    cfg.n_clients = 200;
    cfg.area_side = 100.0;
    cfg.range = 13.41;
    cfg.n_clusters = 5;
    cfg.target_fraction = 0.5;
    cfg.matching = MatchingModel::Uniform;
    cfg.ring_size_override = 0;
    cfg.p_c = 0.999;
    cfg.dim = 16;
    cfg.rounds = 1;
    cfg.seeds.topology = mix_seed(seed, 1);
    cfg.seeds.clusters = mix_seed(seed, 2);
    cfg.seeds.targets = mix_seed(seed, 3);
    cfg.seeds.pool = mix_seed(seed, 4);
    cfg.seeds.ppt_pool = mix_seed(seed, 6);
    cfg.seeds.data = mix_seed(seed, 8);
    cfg.seeds.sim = mix_seed(seed, 10);
    return cfg;
}

// One CFL-vs-PPT message comparison on a scenario (single round, synthetic
// updates). Returns (cfl_messages, ppt_messages).
struct RatioSample {
    std::uint64_t cfl_messages{0};
    std::uint64_t ppt_messages{0};
    double ratio() const {
        return ppt_messages == 0 ? 0.0
                                 : static_cast<double>(cfl_messages) /
                                       static_cast<double>(ppt_messages);
    }
};

inline std::map<ClientId, ModelVector> synthetic_updates(const BuiltScenario& sc, std::size_t dim,
                                                         std::uint64_t seed) {
    std::map<ClientId, ModelVector> updates;
    Rng rng(seed);
    for (const auto& cl : sc.plan.clusters) {
        for (auto id : cl.targets) {
            ModelVector x(dim);
            for (std::size_t i = 0; i < dim; ++i) x[i] = rng.uniform(-1.0, 1.0);
            updates[id] = std::move(x);
        }
    }
    return updates;
}

inline RatioSample measure_ratio(const ExperimentConfig& cfg, BuiltScenario& sc) {
    RatioSample sample;
    auto updates = synthetic_updates(sc, cfg.dim, cfg.seeds.data);
    {
        Simulation sim = make_simulation(cfg, sc);
        RoundReport r = sim.run_round(Protocol::Cfl, 0, updates);
        sample.cfl_messages = r.counters.aggregation_messages();
    }
    {
        Simulation sim = make_simulation(cfg, sc);
        RoundReport r = sim.run_round(Protocol::Ppt, 0, updates);
        sample.ppt_messages = r.counters.aggregation_messages();
    }
    return sample;
}

// Collect `wanted` routable sparse scenarios starting from seed_base,
// bumping the seed until enough accept; refuses after max_attempts.
inline std::vector<RatioSample> ratio_sweep(std::size_t wanted, std::uint64_t seed_base,
                                            std::size_t max_attempts, std::size_t* attempts_out) {
    std::vector<RatioSample> samples;
    std::size_t attempts = 0;
    for (std::uint64_t s = 0; samples.size() < wanted && attempts < max_attempts; ++s) {
        attempts++;
        ExperimentConfig cfg = sparse_config(seed_base + s);
        BuiltScenario sc = build_scenario(cfg, /*with_ppt=*/true, /*with_comm_keys=*/false);
        if (!scenario_routable(sc)) continue;
        sc.table = establish_comm_keys(sc.plan, sc.rings, cfg.seeds.nonce);
        ClusterPlan gp = global_plan(sc.plan, cfg.n_clients);
        sc.ppt->table = establish_comm_keys(gp, sc.ppt->rings, cfg.seeds.ppt_nonce);
        samples.push_back(measure_ratio(cfg, sc));
    }
    if (attempts_out) *attempts_out = attempts;
    if (samples.size() < wanted) {
        throw RouteInfeasible("could not collect enough routable sparse scenarios");
    }
    return samples;
}

inline double median_ratio(std::vector<RatioSample> samples) {
    std::vector<double> r;
    for (const auto& s : samples) r.push_back(s.ratio());
    std::sort(r.begin(), r.end());
    const std::size_t n = r.size();
    return n % 2 == 1 ? r[n / 2] : 0.5 * (r[n / 2 - 1] + r[n / 2]);
}

}  // namespace cfl
