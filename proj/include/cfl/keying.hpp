#pragma once

// Secure communication key establishment:
//
//   * predistribution - every client pair picked by the in-cluster matching
//     draws a fresh pairwise key from a seeded pool and stores it in both
//     rings (exactly m_h entries per ring in the uniform model),
//   * discovery - a client broadcasts a fresh plaintext challenge plus the
//     challenge encrypted under each ring key; a responder learns which keys
//     it shares by trial decryption and comparison,
//   * derivation - the communication key of a pair is the XOR fold of all
//     shared pairwise keys,
//   * revocation - ring neighbors of a suspect hold voting keys whose hashes
//     are predistributed; a quorum of hash-verified plaintext votes cuts all
//     of the suspect's connections,
//   * re-keying - affected clients re-run the establishment steps; everyone
//     else keeps byte-identical state.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cfl/analysis.hpp"
#include "cfl/core.hpp"
#include "cfl/crypto.hpp"
#include "cfl/graph.hpp"
#include "cfl/topology.hpp"

namespace cfl {

using PairwiseKey = Bytes;

struct RingEntry {
    ClientId peer{};
    PairwiseKey key;
    bool operator==(const RingEntry&) const = default;
};

struct KeyRing {
    ClientId owner{};
    std::vector<RingEntry> entries;  // sorted by peer id

    bool operator==(const KeyRing&) const = default;

    const PairwiseKey* find(ClientId peer) const {
        for (const auto& e : entries) {
            if (e.peer == peer) return &e.key;
        }
        return nullptr;
    }
};

using KeyRingMap = std::map<ClientId, KeyRing>;

enum class MatchingModel {
    Uniform,      // random m_h-regular matching over the whole cluster
    RangeLimited  // matching restricted to in-range pairs, ring size <= m_h
};

// ---- key pool ----------------------------------------------------------------

// Seeded stream of unique pairwise keys.
class KeyPool {
public:
    explicit KeyPool(std::uint64_t seed) : rng_(seed) {}

    PairwiseKey draw() {
        for (;;) {
            Bytes k = rng_.bytes(kKeyBytes);
            if (issued_.insert(std::string(k.begin(), k.end())).second) return k;
        }
    }

private:
    Rng rng_;
    std::set<std::string> issued_;
};

// ---- predistribution -----------------------------------------------------------

namespace detail {

inline void insert_ring_pair(KeyRingMap& rings, ClientId a, ClientId b, const PairwiseKey& k) {
    rings[a].owner = a;
    rings[b].owner = b;
    rings[a].entries.push_back({b, k});
    rings[b].entries.push_back({a, k});
}

inline void sort_rings(KeyRingMap& rings) {
    for (auto& [id, ring] : rings) {
        std::sort(ring.entries.begin(), ring.entries.end(),
                  [](const RingEntry& x, const RingEntry& y) { return x.peer < y.peer; });
    }
}

// Matching edges for one cluster, as index pairs into `members`.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> cluster_matching(
    const Cluster& cluster, std::size_t m_h, MatchingModel model, const NetworkTopology* topo,
    Rng& rng) {
    const std::size_t z = cluster.members.size();
    if (model == MatchingModel::Uniform) {
        AdjacencyList g = sample_regular_graph(z, m_h, rng);
        std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
        for (std::uint32_t a = 0; a < g.size(); ++a) {
            for (std::uint32_t b : g.neighbors[a]) {
                if (a < b) edges.emplace_back(a, b);
            }
        }
        return edges;
    }
    // RangeLimited: greedy randomized matching over in-range member pairs with
    // a per-client cap of m_h ring entries. Clients short of m_h after the
    // in-range pass are topped up with random in-cluster partners, so the ring
    // graph keeps the range locality but stays connectable.
    std::unordered_map<std::uint32_t, std::uint32_t> local;
    for (std::uint32_t i = 0; i < z; ++i) local[cluster.members[i].value] = i;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> candidates;
    for (std::uint32_t i = 0; i < z; ++i) {
        for (std::uint32_t nb : topo->graph.neighbors[cluster.members[i].value]) {
            auto it = local.find(nb);
            if (it != local.end() && i < it->second) candidates.emplace_back(i, it->second);
        }
    }
    rng.shuffle(candidates);
    std::vector<std::size_t> degree(z, 0);
    std::set<std::pair<std::uint32_t, std::uint32_t>> picked;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    auto add_edge = [&](std::uint32_t a, std::uint32_t b) {
        if (a > b) std::swap(a, b);
        if (!picked.insert({a, b}).second) return;
        degree[a]++;
        degree[b]++;
        edges.emplace_back(a, b);
    };
    for (auto [a, b] : candidates) {
        if (degree[a] < m_h && degree[b] < m_h) add_edge(a, b);
    }
    std::vector<std::uint32_t> order(z);
    for (std::uint32_t i = 0; i < z; ++i) order[i] = i;
    rng.shuffle(order);
    for (auto a : order) {
        for (int tries = 0; degree[a] < m_h && tries < 256; ++tries) {
            const auto b = static_cast<std::uint32_t>(rng.index(z));
            if (b == a || degree[b] >= m_h) continue;
            add_edge(a, b);
        }
    }
    return edges;
}

}  // namespace detail

// Build every cluster's key rings. In the uniform model each ring has exactly
// m_h entries (one client may carry m_h+1 when z_h*m_h is odd).
inline KeyRingMap predistribute_keyrings(const ClusterPlan& plan, std::size_t m_h,
                                         std::uint64_t pool_seed,
                                         MatchingModel model = MatchingModel::Uniform,
                                         const NetworkTopology* topo = nullptr) {
    if (m_h < 1) throw RingInfeasible("ring size must be >= 1");
    if (model == MatchingModel::RangeLimited && topo == nullptr) {
        throw ConfigError("range-limited matching needs the topology");
    }
    KeyPool pool(pool_seed);
    Rng rng(pool_seed ^ 0xC0FFEEull);
    KeyRingMap rings;
    for (const auto& cluster : plan.clusters) {
        const std::size_t z = cluster.members.size();
        if (m_h >= z) {
            throw RingInfeasible("ring size " + std::to_string(m_h) +
                                 " >= cluster size " + std::to_string(z));
        }
        for (auto m : cluster.members) rings[m].owner = m;  // empty ring allowed for isolated
        auto edges = detail::cluster_matching(cluster, m_h, model, topo, rng);
        for (auto [a, b] : edges) {
            detail::insert_ring_pair(rings, cluster.members[a], cluster.members[b], pool.draw());
        }
    }
    detail::sort_rings(rings);
    return rings;
}

// Neighbor-pairwise rings: one pairwise key per range edge, ring = all range
// neighbors. This models the baseline protocol's key layout, where keys are
// shared exactly between physically adjacent clients.
inline KeyRingMap neighbor_rings(const NetworkTopology& topo, std::uint64_t pool_seed) {
    KeyPool pool(pool_seed);
    KeyRingMap rings;
    for (std::uint32_t i = 0; i < topo.client_count(); ++i) rings[ClientId{i}].owner = ClientId{i};
    for (const auto& [a, b] : topo.edges) {
        detail::insert_ring_pair(rings, ClientId{a}, ClientId{b}, pool.draw());
    }
    detail::sort_rings(rings);
    return rings;
}

// ---- challenge / response -------------------------------------------------------

struct Challenge {
    ClientId broadcaster{};
    Bytes plaintext;                                // a_{h,i}, 16 fresh bytes
    std::vector<std::pair<Bytes, Bytes>> sealed;    // (nonce, CK.Enc(k_alpha, a)) per ring entry
};

inline Challenge make_challenge(const KeyRing& ring, std::uint64_t nonce_seed) {
    Rng rng(nonce_seed);
    Challenge ch;
    ch.broadcaster = ring.owner;
    ch.plaintext = rng.bytes(16);
    ch.sealed.reserve(ring.entries.size());
    for (const auto& entry : ring.entries) {
        Bytes nonce = rng.bytes(kNonceBytes);
        ch.sealed.emplace_back(nonce, aead_seal(entry.key, nonce, ch.plaintext));
    }
    return ch;
}

// Trial decryption: the responder returns exactly the ring keys that recover
// the broadcast plaintext from one of the sealed messages.
inline std::vector<PairwiseKey> discover_shared(const KeyRing& responder, const Challenge& ch) {
    std::vector<PairwiseKey> shared;
    for (const auto& entry : responder.entries) {
        bool hit = false;
        for (const auto& [nonce, sealed] : ch.sealed) {
            auto decrypted = aead_open(entry.key, nonce, sealed);
            if (decrypted && *decrypted == ch.plaintext) {
                hit = true;
                break;
            }
        }
        if (hit) shared.push_back(entry.key);
    }
    return shared;
}

// XOR fold of the shared keys. An even multiset can cancel to all-zero, which
// would be unusable as an AE key; that degenerate case falls back to the
// lexicographically first shared key.
inline Bytes derive_comm_key(const std::vector<PairwiseKey>& shared) {
    if (shared.empty()) throw NoSharedKey("no shared pairwise key");
    Bytes folded(shared.front().size(), 0);
    for (const auto& k : shared) {
        for (std::size_t i = 0; i < folded.size(); ++i) folded[i] ^= k[i];
    }
    const bool all_zero = std::all_of(folded.begin(), folded.end(), [](auto b) { return b == 0; });
    if (!all_zero) return folded;
    return *std::min_element(shared.begin(), shared.end());
}

// ---- communication key table -----------------------------------------------------

class CommKeyTable {
public:
    static std::uint64_t pair_key(ClientId a, ClientId b) {
        if (b < a) std::swap(a, b);
        return (static_cast<std::uint64_t>(a.value) << 32) | b.value;
    }

    void put(ClientId a, ClientId b, Bytes key) { keys_[pair_key(a, b)] = std::move(key); }

    bool has(ClientId a, ClientId b) const { return keys_.count(pair_key(a, b)) != 0; }

    const Bytes& get(ClientId a, ClientId b) const {
        auto it = keys_.find(pair_key(a, b));
        if (it == keys_.end()) throw NoSharedKey("no communication key for pair");
        return it->second;
    }

    // Drop every key involving `id`; returns the peers that lost a key.
    std::vector<ClientId> remove_client(ClientId id) {
        std::vector<ClientId> peers;
        for (auto it = keys_.begin(); it != keys_.end();) {
            const ClientId a{static_cast<std::uint32_t>(it->first >> 32)};
            const ClientId b{static_cast<std::uint32_t>(it->first & 0xFFFFFFFFu)};
            if (a == id || b == id) {
                peers.push_back(a == id ? b : a);
                it = keys_.erase(it);
            } else {
                ++it;
            }
        }
        std::sort(peers.begin(), peers.end());
        return peers;
    }

    std::vector<ClientId> neighbors(ClientId id) const {
        std::vector<ClientId> out;
        for (const auto& [pk, key] : keys_) {
            const ClientId a{static_cast<std::uint32_t>(pk >> 32)};
            const ClientId b{static_cast<std::uint32_t>(pk & 0xFFFFFFFFu)};
            if (a == id) out.push_back(b);
            if (b == id) out.push_back(a);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::size_t size() const { return keys_.size(); }

    const std::map<std::uint64_t, Bytes>& entries() const { return keys_; }

private:
    std::map<std::uint64_t, Bytes> keys_;
};

// Run the full challenge/response discovery for every member pair of every
// cluster and derive the communication keys.
inline CommKeyTable establish_comm_keys(const ClusterPlan& plan, const KeyRingMap& rings,
                                        std::uint64_t nonce_seed) {
    CommKeyTable table;
    std::uint64_t challenge_salt = 0;
    for (const auto& cluster : plan.clusters) {
        for (std::size_t i = 0; i < cluster.members.size(); ++i) {
            const ClientId a = cluster.members[i];
            const auto& ring_a = rings.at(a);
            if (ring_a.entries.empty()) continue;
            const Challenge ch = make_challenge(ring_a, nonce_seed ^ (0x9E3779B9ull * ++challenge_salt));
            for (std::size_t j = i + 1; j < cluster.members.size(); ++j) {
                const ClientId b = cluster.members[j];
                auto shared = discover_shared(rings.at(b), ch);
                if (!shared.empty()) table.put(a, b, derive_comm_key(shared));
            }
        }
    }
    return table;
}

// Comm-key graph restricted to `verts` (graph vertices are positions in the
// given vector).
inline AdjacencyList comm_key_graph(const CommKeyTable& table, const std::vector<ClientId>& verts) {
    AdjacencyList g(verts.size());
    for (std::uint32_t i = 0; i < verts.size(); ++i) {
        for (std::uint32_t j = i + 1; j < verts.size(); ++j) {
            if (table.has(verts[i], verts[j])) g.add_edge(i, j);
        }
    }
    return g;
}

// ---- voting-based revocation -------------------------------------------------------

struct VoteState {
    ClientId suspect{};
    std::vector<ClientId> voting_members;        // the suspect's ring neighbors
    std::map<ClientId, Bytes> voting_keys;       // secret v per member (trusted setup)
    std::map<ClientId, Bytes> known_hashes;      // H(v) per member, held by the others
    std::set<ClientId> marked;                   // members whose vote verified
    std::size_t threshold{0};                    // l_h

    bool revocation_due() const { return marked.size() >= threshold; }
};

inline std::size_t default_vote_threshold(std::size_t m_h) { return m_h / 2 + 1; }

// Trusted setup for one suspect: every ring neighbor gets a voting secret and
// the hashes of the other members' secrets.
inline VoteState make_vote_state(ClientId suspect, const KeyRingMap& rings, std::uint64_t setup_seed,
                                 std::optional<std::size_t> threshold = std::nullopt) {
    VoteState st;
    st.suspect = suspect;
    auto it = rings.find(suspect);
    if (it != rings.end()) {
        Rng rng(setup_seed ^ (0xB5297A4Dull * (suspect.value + 1)));
        for (const auto& entry : it->second.entries) st.voting_members.push_back(entry.peer);
        std::sort(st.voting_members.begin(), st.voting_members.end());
        for (auto member : st.voting_members) {
            Bytes v = rng.bytes(32);
            st.known_hashes[member] = sha256(v);
            st.voting_keys[member] = std::move(v);
        }
    }
    st.threshold = threshold.value_or(default_vote_threshold(st.voting_members.size()));
    return st;
}

// A voting member broadcasts its secret in plaintext as the vote.
inline Bytes cast_vote(ClientId member, const VoteState& st) {
    auto it = st.voting_keys.find(member);
    if (it == st.voting_keys.end()) {
        throw NotVotingMember(to_string(member) + " is not a voting member for " +
                              to_string(st.suspect));
    }
    return it->second;
}

// Hash-compare an incoming vote; a match marks that member once. Anything
// else leaves the state untouched.
inline bool verify_and_mark(VoteState& st, const Bytes& vote) {
    const Bytes h = sha256(vote);
    for (const auto& [member, known] : st.known_hashes) {
        if (known == h) return st.marked.insert(member).second;
    }
    return false;
}

// ---- revocation and re-keying ---------------------------------------------------------

struct RevocationOutcome {
    std::vector<ClientId> affected;  // ex ring partners flagged for re-keying
    bool leader_replaced{false};
};

// Cut the suspect out of the system: drop its ring entries everywhere, delete
// every communication key it holds, remove it from targets/eligibility. If it
// led its cluster a new leader is elected among server-adjacent targets;
// failing that the cluster is infeasible until re-planned.
inline RevocationOutcome revoke(ClusterPlan& plan, KeyRingMap& rings, CommKeyTable& table,
                                ClientId suspect, std::uint64_t election_seed) {
    RevocationOutcome out;
    auto it = rings.find(suspect);
    if (it == rings.end()) return out;  // unknown client: no-op

    for (const auto& entry : it->second.entries) {
        auto& peer_ring = rings[entry.peer];
        std::erase_if(peer_ring.entries,
                      [&](const RingEntry& e) { return e.peer == suspect; });
        out.affected.push_back(entry.peer);
    }
    it->second.entries.clear();
    table.remove_client(suspect);
    std::sort(out.affected.begin(), out.affected.end());

    auto& cluster = plan.clusters[plan.cluster_of[suspect.value]];
    cluster.targets.erase(suspect);
    cluster.server_adjacent.erase(suspect);
    cluster.revoked.insert(suspect);
    if (cluster.leader == suspect) {
        std::vector<ClientId> candidates;
        for (auto id : cluster.server_adjacent) {
            if (!cluster.revoked.count(id)) candidates.push_back(id);
        }
        if (candidates.empty()) {
            throw ClusterInfeasible("revoked leader " + to_string(suspect) +
                                    " and no server-adjacent candidate remains");
        }
        Rng rng(election_seed ^ suspect.value);
        cluster.leader = candidates[rng.index(candidates.size())];
        cluster.targets.insert(cluster.leader);
        out.leader_replaced = true;
    }
    return out;
}

// Re-run establishment for the affected clients. A full-cluster set triggers a
// fresh predistribution for that cluster; otherwise affected members are
// re-matched pairwise among themselves and only those rings change.
inline void rekey(ClusterPlan& plan, KeyRingMap& rings, CommKeyTable& table,
                  const std::set<ClientId>& affected, std::size_t m_h, std::uint64_t seed,
                  MatchingModel model = MatchingModel::Uniform,
                  const NetworkTopology* topo = nullptr) {
    if (affected.empty()) return;
    KeyPool pool(seed);
    Rng rng(seed ^ 0xD1CEull);
    for (std::size_t c = 0; c < plan.clusters.size(); ++c) {
        auto& cluster = plan.clusters[c];
        std::vector<ClientId> local;
        for (auto m : cluster.members) {
            if (affected.count(m) && !cluster.revoked.count(m)) local.push_back(m);
        }
        if (local.empty()) continue;

        std::vector<ClientId> active;
        for (auto m : cluster.members) {
            if (!cluster.revoked.count(m)) active.push_back(m);
        }
        const bool whole_cluster = local.size() == active.size();
        if (whole_cluster) {
            // fresh draw for the entire cluster
            for (auto m : active) rings[m].entries.clear();
            Cluster tmp = cluster;
            tmp.members = active;
            auto edges = detail::cluster_matching(tmp, std::min(m_h, active.size() - 1), model,
                                                  topo, rng);
            for (auto [a, b] : edges) {
                detail::insert_ring_pair(rings, active[a], active[b], pool.draw());
            }
        } else {
            // top up the affected members by matching them among themselves
            std::vector<ClientId> pool_members = local;
            rng.shuffle(pool_members);
            for (std::size_t i = 0; i + 1 < pool_members.size(); i += 2) {
                const ClientId a = pool_members[i], b = pool_members[i + 1];
                if (rings[a].find(b) != nullptr) continue;  // already partnered
                detail::insert_ring_pair(rings, a, b, pool.draw());
            }
        }
        detail::sort_rings(rings);

        // refresh communication keys for pairs with at least one affected side
        std::uint64_t salt = c;
        for (std::size_t i = 0; i < active.size(); ++i) {
            const auto& ring_a = rings[active[i]];
            if (ring_a.entries.empty()) continue;
            Challenge ch;
            bool have_challenge = false;
            for (std::size_t j = i + 1; j < active.size(); ++j) {
                const bool touched = affected.count(active[i]) || affected.count(active[j]);
                if (!touched) continue;
                if (!have_challenge) {
                    ch = make_challenge(ring_a, seed ^ (0x9E3779B9ull * ++salt));
                    have_challenge = true;
                }
                auto shared = discover_shared(rings[active[j]], ch);
                if (!shared.empty()) {
                    table.put(active[i], active[j], derive_comm_key(shared));
                }
            }
        }
    }
}

}  // namespace cfl
