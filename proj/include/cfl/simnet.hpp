#pragma once

// Deterministic discrete-event simulation of the aggregation protocols.
//
// Messages travel single hops with a constant latency; events are processed
// in (time, insertion order), so a run is a pure function of the scenario and
// its seeds. The engine executes one round at a time: dropout draw, cluster
// relays over the communication-key graphs (concurrently in simulated time),
// leader uploads, and the cross-cluster combine. The PPT baseline runs the
// same masking, encryption and router over one global cycle instead of one
// cycle per cluster, which isolates the routing structure in the comparison.
//
// Fault injection covers per-round dropouts (announced, or discovered by ack
// timeout with on-the-fly re-planning) and hijacked clients whose relays
// tamper, replay, impersonate, or log what they see. Authentication failures
// abort the cluster's attempt, trigger a vote by the detecting neighbor, and
// are retried once without the suspect.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfl/aggregation.hpp"
#include "cfl/core.hpp"
#include "cfl/crypto.hpp"
#include "cfl/graph.hpp"
#include "cfl/keying.hpp"
#include "cfl/model.hpp"
#include "cfl/report.hpp"
#include "cfl/topology.hpp"

namespace cfl {

enum class Protocol { Cfl, Ppt };

inline const char* to_string(Protocol p) { return p == Protocol::Cfl ? "cfl" : "ppt"; }

enum class DropoutDetection { Announce, Timeout };

enum class AttackScript { Tamper, Impersonate, Replay, EavesdropLog };

struct FaultPlan {
    double dropout_fraction{0.0};
    std::uint64_t dropout_seed{0};
    DropoutDetection detection{DropoutDetection::Announce};
    std::map<ClientId, AttackScript> hijacked;
};

struct SimParams {
    ArithmeticMode mode{ArithmeticMode::Fixed};
    std::size_t dim{64};
    double mask_bound{1000.0};
    std::uint64_t latency_ms{10};
    std::uint64_t ack_timeout_ms{50};
    std::uint64_t stamp_window_ms{30000};
    std::optional<std::size_t> vote_threshold;  // l_h; default majority of ring size
    std::size_t rekey_period_rounds{0};         // 0 = only rekey after revocations
    bool instrument{false};                     // record masks and observed accumulators
    bool count_model_distribution{true};
};

struct BroadcastResult {
    std::set<ClientId> reached;
    std::uint64_t messages{0};
};

// Global key material for the PPT baseline (one ring pool over all clients).
struct PptContext {
    KeyRingMap rings;
    CommKeyTable table;
    ClientId leader{};
};

class Simulation {
public:
    Simulation(NetworkTopology topo, ClusterPlan plan, KeyRingMap rings, CommKeyTable table,
               std::map<ClientId, std::uint64_t> dataset_sizes, std::size_t ring_size,
               SimParams params, FaultPlan faults, std::uint64_t seed)
        : topo_(std::move(topo)),
          plan_(std::move(plan)),
          rings_(std::move(rings)),
          table_(std::move(table)),
          sizes_(std::move(dataset_sizes)),
          m_h_(ring_size),
          params_(params),
          faults_(faults),
          seed_(seed) {
        compute_flood_costs();
    }

    void attach_ppt(PptContext ppt) { ppt_ = std::make_unique<PptContext>(std::move(ppt)); }

    const ClusterPlan& plan() const { return plan_; }
    const KeyRingMap& rings() const { return rings_; }
    const CommKeyTable& comm_keys() const { return table_; }
    const std::map<ClientId, VoteState>& vote_ledger() const { return vote_ledger_; }
    const std::set<ClientId>& revoked() const { return revoked_; }
    const std::map<ClientId, std::vector<std::string>>& eavesdrop_log() const {
        return eavesdrop_log_;
    }

    void inject_hijack(ClientId client, AttackScript script) { faults_.hijacked[client] = script; }

    bool is_server_adjacent(ClientId id) const {
        if (id.value >= plan_.cluster_of.size()) return false;
        const auto& cl = plan_.clusters[plan_.cluster_of[id.value]];
        return cl.server_adjacent.count(id) != 0;
    }

    // ---- low-level ops -------------------------------------------------------

    // Single-hop (or client-to-server) delivery. Valid between range
    // neighbors, between pairs holding a communication key, and from a
    // server-adjacent client up to the server.
    void deliver(ClientId src, ClientId dst, std::size_t bytes) {
        if (dst == kServerId) {
            if (!is_server_adjacent(src)) {
                throw NotNeighbor(to_string(src) + " has no direct server link");
            }
            counters_.uploads++;
            counters_.aggregation_bytes += bytes;
        } else {
            const bool keyed = table_.has(src, dst) || (ppt_ && ppt_->table.has(src, dst));
            if (!topo_.has_edge(src, dst) && !keyed) {
                throw NotNeighbor(to_string(src) + " and " + to_string(dst) +
                                  " share neither range nor a communication key");
            }
            counters_.relay_hops++;
            counters_.aggregation_bytes += bytes;
        }
        trace_.push_back({now_ms_ + params_.latency_ms, "deliver", src, dst, bytes, ""});
    }

    // Flood with per-client deduplication over the range graph: every client
    // that first receives the payload rebroadcasts once to all neighbors.
    BroadcastResult neighborhood_broadcast(ClientId origin, std::size_t payload_bytes) {
        BroadcastResult out;
        const auto seen = bfs_reach(topo_.graph, origin.value);
        for (std::uint32_t v = 0; v < seen.size(); ++v) {
            if (seen[v]) {
                out.reached.insert(ClientId{v});
                out.messages += topo_.graph.neighbors[v].size();
            }
        }
        counters_.broadcasts += out.messages;
        counters_.broadcast_bytes += out.messages * payload_bytes;
        trace_.push_back({now_ms_, "broadcast", origin, kServerId, payload_bytes,
                          "reached=" + std::to_string(out.reached.size())});
        return out;
    }

    // ---- round execution -------------------------------------------------------

    RoundReport run_round(Protocol proto, std::uint32_t round,
                          const std::map<ClientId, ModelVector>& updates) {
        begin_round();
        RoundReport report;
        report.round = round;
        report.protocol = to_string(proto);
        report.vote_hash = kVoteHashName;

        const std::vector<ClientId> dropped = draw_dropouts(round);
        report.dropouts = dropped;
        const std::set<ClientId> dead(dropped.begin(), dropped.end());

        std::vector<RelayJob> jobs =
            proto == Protocol::Cfl ? make_cfl_jobs(round, dead) : make_ppt_jobs(round, dead);
        count_round_broadcasts(proto, jobs);

        round_updates_ = &updates;
        for (auto& job : jobs) {
            if (!job.finished) start_attempt(job, round);
        }
        while (!queue_.empty()) {
            Event ev = queue_.top();
            queue_.pop();
            now_ms_ = ev.time;
            RelayJob& job = jobs[ev.job];
            if (job.finished) continue;
            if (ev.kind == EventKind::RelayDeliver) {
                on_relay_deliver(job, ev, round);
            } else {
                on_ack_timeout(job, ev, round);
            }
        }
        round_updates_ = nullptr;

        finish_round(jobs, dead, report);
        report.counters = counters_;
        report.auth_failures = auth_failures_;
        report.votes_cast = votes_cast_;
        report.revoked_this_round = revoked_this_round_;
        report.trace = std::move(trace_);
        trace_.clear();

        maybe_rekey(round, report);
        return report;
    }

private:
    // ---- events ---------------------------------------------------------------

    enum class EventKind { RelayDeliver, AckTimeout };

    struct Event {
        std::uint64_t time{0};
        std::uint64_t seq{0};
        EventKind kind{EventKind::RelayDeliver};
        std::size_t job{0};
        std::uint32_t from_vertex{0};
        std::uint32_t to_vertex{0};
        Envelope env;

        bool operator>(const Event& o) const {
            return time != o.time ? time > o.time : seq > o.seq;
        }
    };

    struct RelayJob {
        std::size_t index{0};
        std::uint32_t cluster{0};  // report slot; PPT uses 0
        bool is_ppt{false};
        std::vector<ClientId> verts;  // announced live targets, sorted
        AdjacencyList graph;          // comm-key graph over verts
        CommKeyTable* table{nullptr};
        std::uint32_t leader{0};  // vertex index
        std::vector<char> alive;
        std::vector<char> required;  // vertices whose update must enter the sum
        std::vector<char> visited;
        std::vector<std::uint32_t> planned;  // upcoming hops from current vertex
        std::size_t next{0};
        std::uint32_t current{0};
        AggVector acc;
        AggVector mask_s;
        std::uint32_t sends{0};
        std::uint32_t deliveries{0};
        std::vector<ClientId> included;           // first-visit order
        std::map<ClientId, double> float_weight;  // p over announced targets
        std::uint64_t announced_weight{0};
        int retries{0};
        bool finished{false};
        bool uploaded{false};
        ClusterRoundReport report;
    };

    // ---- round setup -----------------------------------------------------------

    void begin_round() {
        counters_ = {};
        trace_.clear();
        auth_failures_ = 0;
        votes_cast_ = 0;
        revoked_this_round_.clear();
        now_ms_ = 0;
        seq_ = 0;
        while (!queue_.empty()) queue_.pop();
    }

    std::vector<ClientId> draw_dropouts(std::uint32_t round) {
        std::vector<ClientId> all_targets;
        for (const auto& cl : plan_.clusters) {
            for (auto id : cl.targets) {
                if (!revoked_.count(id)) all_targets.push_back(id);
            }
        }
        std::sort(all_targets.begin(), all_targets.end());
        if (faults_.dropout_fraction <= 0.0 || all_targets.empty()) return {};
        const std::size_t want = static_cast<std::size_t>(
            std::llround(faults_.dropout_fraction * static_cast<double>(all_targets.size())));
        Rng rng(mix_seed(faults_.dropout_seed, round));
        rng.shuffle(all_targets);
        all_targets.resize(std::min(want, all_targets.size()));
        std::sort(all_targets.begin(), all_targets.end());
        return all_targets;
    }

    // Walk vertices for a cluster this round. In announce mode the dead never
    // announce and are excluded up front; in timeout mode they announce and
    // die silently, to be discovered by ack timeouts.
    std::vector<ClientId> announced_targets(const Cluster& cl, const std::set<ClientId>& dead) {
        std::vector<ClientId> verts;
        for (auto id : cl.targets) {
            if (revoked_.count(id) || cl.isolated.count(id)) continue;
            if (faults_.detection == DropoutDetection::Announce && dead.count(id)) continue;
            verts.push_back(id);
        }
        std::sort(verts.begin(), verts.end());
        return verts;
    }

    RelayJob make_job(std::size_t index, std::uint32_t report_slot, bool is_ppt,
                      std::vector<ClientId> verts, const std::vector<ClientId>& required_ids,
                      CommKeyTable* table, ClientId leader_id, const std::set<ClientId>& dead,
                      std::uint32_t round) {
        RelayJob job;
        job.index = index;
        job.cluster = report_slot;
        job.is_ppt = is_ppt;
        job.verts = std::move(verts);
        job.table = table;
        job.report.cluster = report_slot;
        job.report.sum = AggVector::zero(params_.mode, params_.dim);
        job.report.mask = AggVector::zero(params_.mode, params_.dim);

        auto find_vertex = [&](ClientId id) -> std::optional<std::uint32_t> {
            auto it = std::lower_bound(job.verts.begin(), job.verts.end(), id);
            if (it != job.verts.end() && *it == id) {
                return static_cast<std::uint32_t>(it - job.verts.begin());
            }
            return std::nullopt;
        };
        job.required.assign(job.verts.size(), required_ids.empty() ? 1 : 0);
        std::vector<ClientId> targets = required_ids.empty() ? job.verts : required_ids;
        for (auto id : required_ids) {
            if (auto v = find_vertex(id)) job.required[*v] = 1;
        }
        if (job.verts.empty() || targets.empty()) {
            job.report.status = ClusterStatus::Empty;
            job.report.abort_reason = "no live targets";
            job.finished = true;
            return job;
        }
        for (auto id : targets) job.announced_weight += dataset_size(id);
        for (auto id : targets) {
            job.float_weight[id] = static_cast<double>(dataset_size(id)) /
                                   static_cast<double>(job.announced_weight);
        }
        // leader: the configured one if it is live, otherwise re-elected among
        // live server-adjacent targets
        const bool leader_ok = !dead.count(leader_id) && !revoked_.count(leader_id) &&
                               find_vertex(leader_id).has_value();
        if (!leader_ok) {
            std::vector<std::uint32_t> candidates;
            for (std::uint32_t i = 0; i < job.verts.size(); ++i) {
                if (!job.required[i] || dead.count(job.verts[i])) continue;
                if (is_server_adjacent(job.verts[i])) candidates.push_back(i);
            }
            if (candidates.empty()) {
                job.report.status = ClusterStatus::Infeasible;
                job.report.abort_reason = "no live server-adjacent leader candidate";
                job.finished = true;
                return job;
            }
            Rng rng(mix_seed(seed_, mix_seed(0xE1EC7u + report_slot, round)));
            job.leader = candidates[rng.index(candidates.size())];
            trace_.push_back({now_ms_, "leader_election", job.verts[job.leader], kServerId, 0,
                              "replaced " + to_string(leader_id)});
        } else {
            job.leader = *find_vertex(leader_id);
        }
        job.report.leader = job.verts[job.leader];

        job.graph = comm_key_graph(*table, job.verts);
        job.alive.assign(job.verts.size(), 1);
        if (faults_.detection == DropoutDetection::Timeout) {
            for (std::uint32_t i = 0; i < job.verts.size(); ++i) {
                if (dead.count(job.verts[i])) job.alive[i] = 0;
            }
        }
        return job;
    }

    std::vector<RelayJob> make_cfl_jobs(std::uint32_t round, const std::set<ClientId>& dead) {
        std::vector<RelayJob> jobs;
        for (std::uint32_t c = 0; c < plan_.clusters.size(); ++c) {
            const auto& cl = plan_.clusters[c];
            jobs.push_back(make_job(jobs.size(), c, false, announced_targets(cl, dead), {},
                                    &table_, cl.leader, dead, round));
        }
        return jobs;
    }

    // The baseline's cycle may relay through any live client; only the live
    // targets are required stops.
    std::vector<RelayJob> make_ppt_jobs(std::uint32_t round, const std::set<ClientId>& dead) {
        if (!ppt_) throw ConfigError("PPT baseline requested but no PPT key material attached");
        std::vector<ClientId> required;
        for (const auto& cl : plan_.clusters) {
            auto part = announced_targets(cl, dead);
            required.insert(required.end(), part.begin(), part.end());
        }
        std::sort(required.begin(), required.end());
        std::vector<ClientId> verts;
        for (std::uint32_t i = 0; i < topo_.client_count(); ++i) {
            const ClientId id{i};
            if (revoked_.count(id)) continue;
            if (faults_.detection == DropoutDetection::Announce && dead.count(id)) continue;
            verts.push_back(id);
        }
        std::vector<RelayJob> jobs;
        jobs.push_back(make_job(0, 0, true, std::move(verts), required, &ppt_->table,
                                ppt_->leader, dead, round));
        return jobs;
    }

    // ---- relay state machine ------------------------------------------------------

    std::uint64_t dataset_size(ClientId id) const {
        auto it = sizes_.find(id);
        return it == sizes_.end() ? 1 : it->second;
    }

    AggVector contribution(const RelayJob& job, ClientId id) const {
        auto it = round_updates_->find(id);
        if (it == round_updates_->end()) {
            throw ConfigError("missing update vector for target " + to_string(id));
        }
        return weighted_contribution(params_.mode, it->second, job.float_weight.at(id),
                                     dataset_size(id));
    }

    void start_attempt(RelayJob& job, std::uint32_t round) {
        job.visited.assign(job.verts.size(), 0);
        job.visited[job.leader] = 1;
        job.current = job.leader;
        const ClientId leader_id = job.verts[job.leader];
        job.included = {leader_id};
        job.report.route = {leader_id};
        job.sends = 0;
        job.deliveries = 0;

        AggVector base = contribution(job, leader_id);
        MaskResult m = mask(base, params_.mask_bound,
                            mix_seed(seed_, mix_seed(0x3A5Cu + job.cluster,
                                                     mix_seed(round, job.retries))));
        job.acc = m.masked;
        job.mask_s = m.mask;
        if (params_.instrument) {
            job.report.mask = job.mask_s;
            job.report.observed_values.clear();
        }

        try {
            job.planned = plan_walk(job, job.leader, round, /*strict=*/job.retries == 0);
        } catch (const RouteInfeasible& e) {
            if (job.is_ppt) throw;
            job.report.status = ClusterStatus::Aborted;
            job.report.abort_reason = e.what();
            job.finished = true;
            return;
        }
        job.next = 0;
        send_next(job, round);
    }

    // DFS walk with stack backtracking over live vertices. When prior visits
    // block the stack the walk hops through visited vertices to the nearest
    // unvisited target, and it ends with a shortest path back to the leader.
    // `strict` refuses disconnected live graphs (initial planning); replans
    // tolerate unreachable leftovers, which are excluded from the round.
    std::vector<std::uint32_t> plan_walk(RelayJob& job, std::uint32_t from, std::uint32_t round,
                                         bool strict) {
        const auto& g = job.graph;
        std::vector<char> alive = job.alive;
        if (strict) {
            const auto seen = bfs_reach(g, from, alive);
            for (std::uint32_t v = 0; v < job.verts.size(); ++v) {
                if (job.required[v] && alive[v] && !seen[v]) {
                    throw RouteInfeasible("live-target key graph is disconnected");
                }
            }
        }

        Rng rng(mix_seed(seed_, mix_seed(0x40107Eu + job.cluster,
                                         mix_seed(round, job.sends + 131 * job.retries))));
        std::vector<std::uint32_t> walk;
        std::vector<std::uint32_t> stack{from};
        std::uint32_t current = from;
        std::vector<char> planned_visit = job.visited;
        auto fresh_neighbors = [&](std::uint32_t u) {
            std::vector<std::uint32_t> fresh;
            for (auto v : g.neighbors[u]) {
                if (job.required[v] && alive[v] && !planned_visit[v]) fresh.push_back(v);
            }
            return fresh;
        };
        auto any_unplanned = [&]() {
            for (std::uint32_t v = 0; v < job.verts.size(); ++v) {
                if (job.required[v] && alive[v] && !planned_visit[v]) return true;
            }
            return false;
        };
        while (any_unplanned()) {
            auto fresh = fresh_neighbors(current);
            if (!fresh.empty()) {
                const std::uint32_t v = fresh[rng.index(fresh.size())];
                planned_visit[v] = 1;
                walk.push_back(v);
                stack.push_back(v);
                current = v;
                continue;
            }
            if (stack.size() > 1) {
                stack.pop_back();
                current = stack.back();
                walk.push_back(current);  // backtrack hop is a real transmission
                continue;
            }
            // stack exhausted with unvisited targets left: hop through other
            // vertices to the nearest one (relays and replans land here)
            auto path = nearest_unvisited_path(g, current, alive, planned_visit, job.required);
            if (path.empty()) break;  // unreachable remainder, excluded
            for (std::size_t i = 1; i < path.size(); ++i) walk.push_back(path[i]);
            current = path.back();
            planned_visit[current] = 1;
            stack = {current};
        }
        if (current != job.leader) {
            auto back = detail::shortest_path(g, current, job.leader, alive);
            if (back.empty()) throw RouteInfeasible("cannot return to the leader");
            for (std::size_t i = 1; i < back.size(); ++i) walk.push_back(back[i]);
        }
        return walk;
    }

    static std::vector<std::uint32_t> nearest_unvisited_path(const AdjacencyList& g,
                                                             std::uint32_t from,
                                                             const std::vector<char>& alive,
                                                             const std::vector<char>& visited,
                                                             const std::vector<char>& required) {
        std::vector<std::int64_t> prev(g.size(), -1);
        std::vector<char> seen(g.size(), 0);
        std::vector<std::uint32_t> queue{from};
        seen[from] = 1;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::uint32_t u = queue[head];
            for (auto v : g.neighbors[u]) {
                if (seen[v] || !alive[v]) continue;
                seen[v] = 1;
                prev[v] = u;
                if (required[v] && !visited[v]) {
                    std::vector<std::uint32_t> path{v};
                    while (path.back() != from) {
                        path.push_back(static_cast<std::uint32_t>(prev[path.back()]));
                    }
                    std::reverse(path.begin(), path.end());
                    return path;
                }
                queue.push_back(v);
            }
        }
        return {};
    }

    void send_next(RelayJob& job, std::uint32_t round) {
        if (job.next >= job.planned.size()) {
            finish_cluster(job);
            return;
        }
        const std::uint32_t to = job.planned[job.next];
        const std::uint32_t from = job.current;
        const ClientId from_id = job.verts[from];
        const ClientId to_id = job.verts[to];
        const Bytes& key = job.table->get(from_id, to_id);

        Envelope env = seal_hop(job.acc, round, job.sends, now_ms_, from_id, to_id, key,
                                nonce_counter_++, nonce_registry_);
        apply_hijack_script(job, from_id, to_id, env, round);
        job.sends++;

        // per-hop route consensus broadcast
        counters_.broadcasts += flood_cost(job);
        counters_.broadcast_bytes += flood_cost(job) * 8;

        if (!job.alive[to]) {
            // receiver is dead: the attempt goes out, the ack never comes
            counters_.failed_attempts++;
            counters_.aggregation_bytes += env.wire_bytes();
            schedule({now_ms_ + params_.ack_timeout_ms, seq_++, EventKind::AckTimeout, job.index,
                      from, to, {}});
            return;
        }
        counters_.relay_hops++;
        counters_.aggregation_bytes += env.wire_bytes();
        schedule({now_ms_ + params_.latency_ms, seq_++, EventKind::RelayDeliver, job.index, from,
                  to, std::move(env)});
    }

    void on_relay_deliver(RelayJob& job, const Event& ev, std::uint32_t round) {
        const ClientId from_id = job.verts[ev.from_vertex];
        const ClientId to_id = job.verts[ev.to_vertex];
        const Bytes& key = job.table->get(from_id, to_id);
        OpenResult r =
            open_hop(ev.env, key, round, job.deliveries, now_ms_, params_.stamp_window_ms);
        if (!r.auth_ok || !r.stamp_ok) {
            if (!r.auth_ok) {
                auth_failures_++;
                trace_.push_back({now_ms_, "auth_failure", from_id, to_id, ev.env.wire_bytes(),
                                  "tag rejected"});
            } else {
                trace_.push_back({now_ms_, "stale_timestamp", from_id, to_id,
                                  ev.env.wire_bytes(), "timestamp rejected"});
            }
            handle_attack(job, ev.from_vertex, to_id, round,
                          r.auth_ok ? "stale timestamp" : "authentication failure");
            return;
        }
        job.deliveries++;
        trace_.push_back({now_ms_, "relay", from_id, to_id, ev.env.wire_bytes(), ""});

        if (eavesdropper(to_id)) log_eavesdrop(to_id, ev.env, &r.value);
        if (params_.instrument) job.report.observed_values.emplace_back(to_id, r.value);

        job.acc = r.value;
        job.current = ev.to_vertex;
        job.next++;
        job.report.route.push_back(to_id);
        if (job.required[ev.to_vertex] && !job.visited[ev.to_vertex]) {
            job.visited[ev.to_vertex] = 1;
            add_in_place(job.acc, contribution(job, to_id));
            job.included.push_back(to_id);
            if (params_.instrument) job.report.observed_values.emplace_back(to_id, job.acc);
        }
        send_next(job, round);
    }

    void on_ack_timeout(RelayJob& job, const Event& ev, std::uint32_t round) {
        const ClientId dead_id = job.verts[ev.to_vertex];
        trace_.push_back({now_ms_, "timeout", job.verts[ev.from_vertex], dead_id, 0,
                          "no ack, re-planning"});
        job.alive[ev.to_vertex] = 0;
        try {
            job.planned = plan_walk(job, job.current, round, /*strict=*/false);
            job.next = 0;
            send_next(job, round);
        } catch (const RouteInfeasible& e) {
            if (job.is_ppt) throw;
            job.report.status = ClusterStatus::Aborted;
            job.report.abort_reason = e.what();
            job.finished = true;
        }
    }

    void finish_cluster(RelayJob& job) {
        // walk complete, accumulator back at the leader
        AggVector sum = unmask_and_sum(job.acc, job.mask_s);
        std::uint64_t included_weight = 0;
        for (auto id : job.included) included_weight += dataset_size(id);
        if (params_.mode == ArithmeticMode::Float && included_weight != job.announced_weight &&
            included_weight > 0) {
            // re-normalize the in-cluster weights over the actual participants
            sum.fv = scale(sum.fv, static_cast<double>(job.announced_weight) /
                                       static_cast<double>(included_weight));
        }
        job.report.sum = sum;
        job.report.included = job.included;
        job.report.participating_weight = included_weight;
        job.finished = true;
        job.uploaded = true;

        counters_.uploads++;
        counters_.aggregation_bytes += serialize(sum).size() + 8;
        trace_.push_back({now_ms_ + params_.latency_ms, "upload", job.verts[job.leader],
                          kServerId, serialize(sum).size() + 8, ""});
    }

    // ---- attacks / votes -----------------------------------------------------------

    bool eavesdropper(ClientId id) const {
        auto it = faults_.hijacked.find(id);
        return it != faults_.hijacked.end() && it->second == AttackScript::EavesdropLog;
    }

    void apply_hijack_script(RelayJob& job, ClientId sender, ClientId receiver, Envelope& env,
                             std::uint32_t round) {
        auto it = faults_.hijacked.find(sender);
        if (it == faults_.hijacked.end()) return;
        switch (it->second) {
            case AttackScript::Tamper: {
                Rng rng(mix_seed(seed_, mix_seed(0x7A3Bu, seq_)));
                const std::size_t bit = rng.index(env.sealed.size() * 8);
                env.sealed[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
                break;
            }
            case AttackScript::Impersonate: {
                // sealed under a key the hijacker does not actually share
                Rng rng(mix_seed(seed_, mix_seed(0x1403u, seq_)));
                StampedPayload p{serialize(job.acc), Timestamp{round, job.sends, now_ms_}};
                env.sealed = aead_seal(rng.bytes(kKeyBytes), env.nonce, serialize(p));
                break;
            }
            case AttackScript::Replay: {
                // re-stamp with an old step, as if replaying a stale envelope
                const Bytes& key = job.table->get(sender, receiver);
                const std::uint32_t stale = job.sends > 0 ? job.sends - 1 : 0xFFFFu;
                StampedPayload p{serialize(job.acc), Timestamp{round, stale, now_ms_}};
                env.sealed = aead_seal(key, env.nonce, serialize(p));
                break;
            }
            case AttackScript::EavesdropLog:
                log_eavesdrop(sender, env, nullptr);
                break;
        }
    }

    void log_eavesdrop(ClientId id, const Envelope& env, const AggVector* decrypted) {
        auto& log = eavesdrop_log_[id];
        const std::size_t keep = std::min<std::size_t>(env.sealed.size(), 24);
        log.push_back("ciphertext:" +
                      to_hex(Bytes(env.sealed.begin(), env.sealed.begin() + keep)));
        if (decrypted) {
            std::string v = "masked_view:";
            if (decrypted->mode == ArithmeticMode::Fixed) {
                for (std::size_t i = 0; i < std::min<std::size_t>(4, decrypted->qv.dim()); ++i) {
                    v += std::to_string(std::bit_cast<std::int64_t>(decrypted->qv.lanes[i])) + ",";
                }
            } else {
                for (std::size_t i = 0; i < std::min<std::size_t>(4, decrypted->fv.dim()); ++i) {
                    v += std::to_string(decrypted->fv[i]) + ",";
                }
            }
            log.push_back(v);
        }
    }

    void handle_attack(RelayJob& job, std::uint32_t suspect_vertex, ClientId detector,
                       std::uint32_t round, const std::string& reason) {
        const ClientId suspect = job.verts[suspect_vertex];
        if (!job.is_ppt) observe_attack(detector, suspect, job.cluster);
        if (job.retries == 0) {
            job.retries = 1;
            job.alive[suspect_vertex] = 0;  // excluded from this round's retry
            job.report.dropped.push_back(suspect);
            trace_.push_back({now_ms_, "retry", suspect, detector, 0, reason});
            if (suspect_vertex == job.leader) {
                std::vector<std::uint32_t> candidates;
                for (std::uint32_t i = 0; i < job.verts.size(); ++i) {
                    if (job.alive[i] && is_server_adjacent(job.verts[i])) candidates.push_back(i);
                }
                if (candidates.empty()) {
                    job.report.status = ClusterStatus::Aborted;
                    job.report.abort_reason = "suspect leader, no replacement";
                    job.finished = true;
                    return;
                }
                Rng rng(mix_seed(seed_, mix_seed(0x5EAD2u + job.cluster, round)));
                job.leader = candidates[rng.index(candidates.size())];
                job.report.leader = job.verts[job.leader];
            }
            start_attempt(job, round);
        } else {
            job.report.status = ClusterStatus::Aborted;
            job.report.abort_reason = reason;
            job.finished = true;
        }
    }

    // A client that observed an active attack votes against the suspect; the
    // vote floods the neighborhood and every voting member verifies and marks
    // it. A quorum revokes the suspect on the spot.
    void observe_attack(ClientId detector, ClientId suspect, std::uint32_t cluster) {
        if (revoked_.count(suspect)) return;
        auto it = vote_ledger_.find(suspect);
        if (it == vote_ledger_.end()) {
            it = vote_ledger_
                     .emplace(suspect, make_vote_state(suspect, rings_, mix_seed(seed_, 0x707Eu),
                                                       params_.vote_threshold))
                     .first;
        }
        VoteState& state = it->second;
        if (!state.voting_keys.count(detector)) return;  // not a voting member
        const Bytes vote = cast_vote(detector, state);
        votes_cast_++;
        counters_.broadcasts += flood_cost_cluster_[cluster];
        counters_.broadcast_bytes += flood_cost_cluster_[cluster] * vote.size();
        verify_and_mark(state, vote);
        trace_.push_back({now_ms_, "vote", detector, suspect, vote.size(),
                          "marked=" + std::to_string(state.marked.size()) + "/" +
                              std::to_string(state.threshold)});
        if (state.revocation_due()) do_revoke(suspect);
    }

    void do_revoke(ClientId suspect) {
        try {
            auto outcome = revoke(plan_, rings_, table_, suspect, mix_seed(seed_, 0xE1EC7ull));
            revoked_.insert(suspect);
            revoked_this_round_.push_back(suspect);
            for (auto id : outcome.affected) pending_rekey_.insert(id);
            trace_.push_back({now_ms_, "revoke", suspect, kServerId, 0,
                              outcome.leader_replaced ? "leader replaced" : ""});
        } catch (const ClusterInfeasible& e) {
            revoked_.insert(suspect);
            revoked_this_round_.push_back(suspect);
            trace_.push_back({now_ms_, "revoke", suspect, kServerId, 0,
                              std::string("cluster infeasible: ") + e.what()});
        }
    }

    void maybe_rekey(std::uint32_t round, RoundReport& report) {
        const bool periodic = params_.rekey_period_rounds > 0 &&
                              (round + 1) % params_.rekey_period_rounds == 0;
        if (periodic) {
            for (const auto& cl : plan_.clusters) {
                for (auto id : cl.members) {
                    if (!cl.revoked.count(id)) pending_rekey_.insert(id);
                }
            }
        }
        if (pending_rekey_.empty()) return;
        rekey(plan_, rings_, table_, pending_rekey_, m_h_,
              mix_seed(seed_, mix_seed(0x4EC3u, round)));
        report.trace.push_back({now_ms_, "rekey", kServerId, kServerId, 0,
                                std::to_string(pending_rekey_.size()) + " clients re-keyed"});
        pending_rekey_.clear();
    }

    // ---- bookkeeping ------------------------------------------------------------

    void count_round_broadcasts(Protocol proto, const std::vector<RelayJob>& jobs) {
        const std::size_t model_bytes = 5 + 8 * params_.dim;
        if (params_.count_model_distribution) {
            if (proto == Protocol::Cfl) {
                for (std::uint32_t c = 0; c < plan_.clusters.size(); ++c) {
                    counters_.broadcasts += flood_cost_cluster_[c];
                    counters_.broadcast_bytes += flood_cost_cluster_[c] * model_bytes;
                }
            } else {
                counters_.broadcasts += flood_cost_global_;
                counters_.broadcast_bytes += flood_cost_global_ * model_bytes;
            }
        }
        for (const auto& job : jobs) {
            // participation announcements
            counters_.broadcasts += flood_cost(job) * job.verts.size();
            counters_.broadcast_bytes += flood_cost(job) * job.verts.size() * 16;
        }
    }

    void compute_flood_costs() {
        flood_cost_cluster_.assign(plan_.clusters.size(), 0);
        for (std::uint32_t c = 0; c < plan_.clusters.size(); ++c) {
            const auto& cl = plan_.clusters[c];
            std::vector<char> member(topo_.client_count(), 0);
            for (auto id : cl.members) member[id.value] = 1;
            const auto seen = bfs_reach(topo_.graph, cl.leader.value, member);
            std::uint64_t cost = 0;
            for (std::uint32_t v = 0; v < seen.size(); ++v) {
                if (!seen[v]) continue;
                for (auto nb : topo_.graph.neighbors[v]) {
                    if (member[nb]) cost++;
                }
            }
            flood_cost_cluster_[c] = cost;
        }
        flood_cost_global_ = 0;
        const auto seen = bfs_reach(topo_.graph, 0);
        for (std::uint32_t v = 0; v < seen.size(); ++v) {
            if (seen[v]) flood_cost_global_ += topo_.graph.neighbors[v].size();
        }
    }

    std::uint64_t flood_cost(const RelayJob& job) const {
        return job.is_ppt ? flood_cost_global_ : flood_cost_cluster_[job.cluster];
    }

    void schedule(Event ev) { queue_.push(std::move(ev)); }

    void finish_round(std::vector<RelayJob>& jobs, const std::set<ClientId>& dead,
                      RoundReport& report) {
        std::vector<std::pair<ModelVector, double>> float_sums;
        std::vector<std::pair<FixedVector, std::uint64_t>> fixed_sums;
        std::uint64_t total_weight = 0;
        bool renormalized = false;
        for (const auto& job : jobs) {
            if (job.uploaded) total_weight += job.report.participating_weight;
        }
        for (auto& job : jobs) {
            // unreached or dead vertices are excluded this round; record them
            std::set<ClientId> excluded(job.report.dropped.begin(), job.report.dropped.end());
            for (std::uint32_t v = 0; v < job.verts.size(); ++v) {
                if (!job.required.empty() && !job.required[v]) continue;
                const ClientId id = job.verts[v];
                const bool in = !job.visited.empty() && job.visited[v];
                if (dead.count(id) || (!in && job.uploaded)) excluded.insert(id);
            }
            job.report.dropped.assign(excluded.begin(), excluded.end());
            if (job.uploaded &&
                job.report.participating_weight != job.announced_weight) {
                renormalized = true;
            }
            if (job.uploaded) {
                if (params_.mode == ArithmeticMode::Float) {
                    float_sums.emplace_back(
                        job.report.sum.fv,
                        static_cast<double>(job.report.participating_weight) /
                            static_cast<double>(total_weight));
                } else {
                    fixed_sums.emplace_back(job.report.sum.qv, job.report.participating_weight);
                }
            }
            report.clusters.push_back(std::move(job.report));
        }
        report.weights_renormalized = renormalized || !report.dropouts.empty();
        if (params_.mode == ArithmeticMode::Float) {
            report.global_sum = float_sums.empty() ? ModelVector(params_.dim)
                                                   : cross_cluster_aggregate(float_sums);
        } else {
            report.global_sum = fixed_sums.empty()
                                    ? ModelVector(params_.dim)
                                    : cross_cluster_aggregate_fixed(fixed_sums).value;
        }
    }

    // ---- state --------------------------------------------------------------------

    NetworkTopology topo_;
    ClusterPlan plan_;
    KeyRingMap rings_;
    CommKeyTable table_;
    std::map<ClientId, std::uint64_t> sizes_;
    std::size_t m_h_;
    SimParams params_;
    FaultPlan faults_;
    std::uint64_t seed_;
    std::unique_ptr<PptContext> ppt_;

    NonceRegistry nonce_registry_;
    std::uint32_t nonce_counter_{0};
    std::map<ClientId, VoteState> vote_ledger_;
    std::set<ClientId> revoked_;
    std::set<ClientId> pending_rekey_;
    std::map<ClientId, std::vector<std::string>> eavesdrop_log_;

    std::vector<std::uint64_t> flood_cost_cluster_;
    std::uint64_t flood_cost_global_{0};

    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
    std::uint64_t seq_{0};
    std::uint64_t now_ms_{0};
    MessageCounters counters_;
    std::vector<TraceRecord> trace_;
    std::uint64_t auth_failures_{0};
    std::uint64_t votes_cast_{0};
    std::vector<ClientId> revoked_this_round_;
    const std::map<ClientId, ModelVector>* round_updates_{nullptr};
};

}  // namespace cfl
