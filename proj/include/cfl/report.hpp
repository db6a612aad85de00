#pragma once

// Per-round accounting: message/byte counters split by kind, per-cluster
// outcomes, route traces, and the aggregate results. The CSV row is the
// stable experiment output; the JSONL trace is the replay/debug record.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "cfl/aggregation.hpp"
#include "cfl/core.hpp"
#include "cfl/model.hpp"

namespace cfl {

enum class ClusterStatus { Ok, Aborted, Infeasible, Empty };

inline const char* to_string(ClusterStatus s) {
    switch (s) {
        case ClusterStatus::Ok: return "ok";
        case ClusterStatus::Aborted: return "aborted";
        case ClusterStatus::Infeasible: return "infeasible";
        case ClusterStatus::Empty: return "empty";
    }
    return "?";
}

struct TraceRecord {
    std::uint64_t time_ms{0};
    std::string kind;  // relay | upload | broadcast | timeout | auth_failure | vote | revoke | ...
    ClientId src{};
    ClientId dst{};
    std::size_t bytes{0};
    std::string note;
};

struct ClusterRoundReport {
    std::uint32_t cluster{0};
    ClusterStatus status{ClusterStatus::Ok};
    ClientId leader{};
    std::vector<ClientId> route;            // realized walk, including replans
    std::vector<ClientId> included;         // targets whose X entered the sum
    std::vector<ClientId> dropped;          // targets excluded this round
    AggVector sum;                          // sum_h after unmasking
    std::uint64_t participating_weight{0};  // sum of included dataset sizes
    // instrumentation (populated when the scenario asks for it)
    AggVector mask;
    std::vector<std::pair<ClientId, AggVector>> observed_values;
    std::string abort_reason;
};

struct MessageCounters {
    std::uint64_t relay_hops{0};        // in-cluster envelope transmissions
    std::uint64_t uploads{0};           // leader -> server
    std::uint64_t broadcasts{0};        // neighborhood-broadcast link messages
    std::uint64_t failed_attempts{0};   // relays that timed out (counted in relay bytes too)
    std::uint64_t aggregation_bytes{0};
    std::uint64_t broadcast_bytes{0};

    // Table-style "communication times": aggregation traffic only.
    std::uint64_t aggregation_messages() const { return relay_hops + uploads; }
    std::uint64_t total_messages() const { return relay_hops + uploads + broadcasts; }
    std::uint64_t total_bytes() const { return aggregation_bytes + broadcast_bytes; }
};

struct RoundReport {
    std::uint32_t round{0};
    std::string protocol;  // "cfl" | "ppt"
    MessageCounters counters;
    std::vector<ClusterRoundReport> clusters;
    std::vector<ClientId> dropouts;
    std::vector<ClientId> revoked_this_round;
    std::uint64_t auth_failures{0};
    std::uint64_t votes_cast{0};
    ModelVector global_sum;   // SUM  (weighted, renormalized over participants)
    ModelVector global_model; // W after the update
    double update_norm{0.0};
    std::string vote_hash;    // hash function identity, for reproducibility
    bool weights_renormalized{false};
    std::vector<TraceRecord> trace;
};

inline std::string round_csv_header() {
    return "round,protocol,aggregation_messages,relay_hops,uploads,broadcasts,failed_attempts,"
           "aggregation_bytes,broadcast_bytes,dropouts,auth_failures,votes,revoked,clusters_ok,"
           "clusters_aborted,update_norm\n";
}

inline std::string to_csv(const RoundReport& r) {
    std::size_t ok = 0, aborted = 0;
    for (const auto& c : r.clusters) {
        if (c.status == ClusterStatus::Ok) ok++;
        if (c.status == ClusterStatus::Aborted || c.status == ClusterStatus::Infeasible) aborted++;
    }
    std::ostringstream out;
    out << r.round << "," << r.protocol << "," << r.counters.aggregation_messages() << ","
        << r.counters.relay_hops << "," << r.counters.uploads << "," << r.counters.broadcasts << ","
        << r.counters.failed_attempts << "," << r.counters.aggregation_bytes << ","
        << r.counters.broadcast_bytes << "," << r.dropouts.size() << "," << r.auth_failures << ","
        << r.votes_cast << "," << r.revoked_this_round.size() << "," << ok << "," << aborted << ","
        << r.update_norm << "\n";
    return out.str();
}

// Newline-delimited structured trace records.
inline std::string to_jsonl(const RoundReport& r) {
    std::ostringstream out;
    for (const auto& t : r.trace) {
        out << "{\"round\":" << r.round << ",\"t_ms\":" << t.time_ms << ",\"kind\":\"" << t.kind
            << "\",\"src\":\"" << to_string(t.src) << "\",\"dst\":\"" << to_string(t.dst)
            << "\",\"bytes\":" << t.bytes;
        if (!t.note.empty()) out << ",\"note\":\"" << t.note << "\"";
        out << "}\n";
    }
    return out.str();
}

}  // namespace cfl
