#include "catch_amalgamated.hpp"

#include <algorithm>
#include <set>

#include "cfl/keying.hpp"

using namespace cfl;

namespace {

// one flat cluster over ids 0..z-1, leader 0
ClusterPlan flat_plan(std::uint32_t z) {
    ClusterPlan plan;
    plan.clusters.resize(1);
    auto& cl = plan.clusters[0];
    for (std::uint32_t i = 0; i < z; ++i) cl.members.push_back(ClientId{i});
    cl.leader = ClientId{0};
    cl.server_adjacent = {ClientId{0}};
    for (std::uint32_t i = 0; i < z; ++i) cl.targets.insert(ClientId{i});
    plan.cluster_of.assign(z, 0);
    return plan;
}

void require_symmetric(const KeyRingMap& rings) {
    for (const auto& [id, ring] : rings) {
        std::set<std::uint32_t> peers;
        for (const auto& e : ring.entries) {
            REQUIRE(peers.insert(e.peer.value).second);  // no duplicate peers
            const auto* back = rings.at(e.peer).find(id);
            REQUIRE(back != nullptr);
            REQUIRE(*back == e.key);  // same key on both sides
        }
    }
}

}  // namespace

TEST_CASE("a two-client cluster pairs them with one shared key", "[keying]") {
    auto rings = predistribute_keyrings(flat_plan(2), 1, 77);
    REQUIRE(rings.size() == 2);
    REQUIRE(rings.at(ClientId{0}).entries.size() == 1);
    REQUIRE(rings.at(ClientId{0}).entries[0].peer == ClientId{1});
    REQUIRE(rings.at(ClientId{0}).entries[0].key == rings.at(ClientId{1}).entries[0].key);
}

TEST_CASE("rings have exactly the requested size and are symmetric", "[keying]") {
    auto rings = predistribute_keyrings(flat_plan(40), 11, 123);
    REQUIRE(rings.size() == 40);
    for (const auto& [id, ring] : rings) REQUIRE(ring.entries.size() == 11);
    require_symmetric(rings);
    // keys are unique per pair
    std::set<std::string> keys;
    for (const auto& [id, ring] : rings) {
        for (const auto& e : ring.entries) {
            keys.insert(std::string(e.key.begin(), e.key.end()));
        }
    }
    REQUIRE(keys.size() == 40 * 11 / 2);
}

TEST_CASE("ring size must leave enough distinct peers", "[keying]") {
    REQUIRE_THROWS_AS(predistribute_keyrings(flat_plan(5), 5, 1), RingInfeasible);
    REQUIRE_THROWS_AS(predistribute_keyrings(flat_plan(5), 0, 1), RingInfeasible);
}

TEST_CASE("range-limited matching respects the cap and symmetry", "[keying]") {
    auto topo = generate_topology(60, 60.0, 15.0, 5);
    auto plan = divide_clusters(topo, 2, 5);
    auto rings = predistribute_keyrings(plan, 6, 9, MatchingModel::RangeLimited, &topo);
    require_symmetric(rings);
    for (const auto& [id, ring] : rings) REQUIRE(ring.entries.size() <= 6);
    // matching stays within the cluster
    for (const auto& [id, ring] : rings) {
        for (const auto& e : ring.entries) {
            REQUIRE(plan.cluster_of[id.value] == plan.cluster_of[e.peer.value]);
        }
    }
}

TEST_CASE("challenge emits one sealed message per ring entry", "[keying]") {
    auto rings = predistribute_keyrings(flat_plan(2), 1, 3);
    Challenge ch = make_challenge(rings.at(ClientId{0}), 21);
    REQUIRE(ch.sealed.size() == 1);
    REQUIRE(ch.plaintext.size() == 16);
    // the matching key recovers the plaintext
    auto open = aead_open(rings.at(ClientId{0}).entries[0].key, ch.sealed[0].first,
                          ch.sealed[0].second);
    REQUIRE(open.has_value());
    REQUIRE(*open == ch.plaintext);
}

TEST_CASE("unrelated keys never pass off as shared", "[keying][slow]") {
    auto rings = predistribute_keyrings(flat_plan(4), 2, 31);
    Challenge ch = make_challenge(rings.at(ClientId{0}), 22);
    Rng rng(99);
    std::size_t accidental = 0;
    for (int i = 0; i < 10000; ++i) {
        KeyRing stranger{ClientId{999}, {{ClientId{0}, rng.bytes(16)}}};
        if (!discover_shared(stranger, ch).empty()) accidental++;
    }
    REQUIRE(accidental == 0);
}

TEST_CASE("discovery returns exactly the ring intersection", "[keying]") {
    Rng rng(55);
    // construct rings sharing exactly three keys
    std::vector<PairwiseKey> shared{rng.bytes(16), rng.bytes(16), rng.bytes(16)};
    KeyRing a{ClientId{1}, {}}, b{ClientId{2}, {}};
    for (int i = 0; i < 3; ++i) {
        a.entries.push_back({ClientId{10 + i}, shared[i]});
        b.entries.push_back({ClientId{20 + i}, shared[i]});
    }
    a.entries.push_back({ClientId{30}, rng.bytes(16)});
    b.entries.push_back({ClientId{31}, rng.bytes(16)});

    Challenge ch = make_challenge(a, 23);
    auto found = discover_shared(b, ch);
    REQUIRE(found.size() == 3);
    for (const auto& k : shared) {
        REQUIRE(std::find(found.begin(), found.end(), k) != found.end());
    }

    // disjoint rings discover nothing
    KeyRing c{ClientId{3}, {{ClientId{40}, rng.bytes(16)}}};
    REQUIRE(discover_shared(c, ch).empty());
}

TEST_CASE("discovery equals the brute-force intersection on random rings", "[keying]") {
    Rng rng(66);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<PairwiseKey> pool;
        for (int i = 0; i < 12; ++i) pool.push_back(rng.bytes(16));
        KeyRing a{ClientId{1}, {}}, b{ClientId{2}, {}};
        std::uint32_t peer = 100;
        for (int i = 0; i < 6; ++i) a.entries.push_back({ClientId{peer++}, pool[rng.index(12)]});
        for (int i = 0; i < 6; ++i) b.entries.push_back({ClientId{peer++}, pool[rng.index(12)]});

        std::set<std::string> a_keys, oracle;
        for (const auto& e : a.entries) a_keys.insert(std::string(e.key.begin(), e.key.end()));
        for (const auto& e : b.entries) {
            const std::string k(e.key.begin(), e.key.end());
            if (a_keys.count(k)) oracle.insert(k);
        }
        std::set<std::string> found;
        for (const auto& k : discover_shared(b, make_challenge(a, 1000 + trial))) {
            found.insert(std::string(k.begin(), k.end()));
        }
        REQUIRE(found == oracle);
    }
}

TEST_CASE("communication key derivation folds with XOR", "[keying]") {
    Rng rng(77);
    const PairwiseKey k = rng.bytes(16);
    REQUIRE(derive_comm_key({k}) == k);

    // the all-zero degenerate case falls back to the first key in order
    REQUIRE(derive_comm_key({k, k}) == k);

    std::vector<PairwiseKey> three{rng.bytes(16), rng.bytes(16), rng.bytes(16)};
    const Bytes folded = derive_comm_key(three);
    std::vector<PairwiseKey> shuffled{three[2], three[0], three[1]};
    REQUIRE(derive_comm_key(shuffled) == folded);
    for (std::size_t i = 0; i < 16; ++i) {
        REQUIRE(folded[i] == (three[0][i] ^ three[1][i] ^ three[2][i]));
    }

    REQUIRE_THROWS_AS(derive_comm_key({}), NoSharedKey);
}

TEST_CASE("established communication keys are symmetric and complete", "[keying]") {
    auto plan = flat_plan(12);
    auto rings = predistribute_keyrings(plan, 3, 13);
    auto table = establish_comm_keys(plan, rings, 29);
    // exactly the matched pairs hold keys
    std::size_t matched = 0;
    for (const auto& [id, ring] : rings) matched += ring.entries.size();
    REQUIRE(table.size() == matched / 2);
    for (const auto& [id, ring] : rings) {
        for (const auto& e : ring.entries) {
            REQUIRE(table.has(id, e.peer));
            REQUIRE(table.get(id, e.peer) == table.get(e.peer, id));
            // a single shared key folds to itself
            REQUIRE(table.get(id, e.peer) == e.key);
        }
    }
}

TEST_CASE("vote state setup distributes hashes to ring neighbors", "[keying]") {
    auto plan = flat_plan(10);
    auto rings = predistribute_keyrings(plan, 3, 17);
    const ClientId suspect{4};
    VoteState st = make_vote_state(suspect, rings, 1234);
    REQUIRE(st.voting_members.size() == rings.at(suspect).entries.size());
    REQUIRE(st.threshold == st.voting_members.size() / 2 + 1);
    for (auto m : st.voting_members) {
        REQUIRE(st.known_hashes.at(m) == sha256(st.voting_keys.at(m)));
    }
}

TEST_CASE("votes verify by hash and deduplicate", "[keying]") {
    auto plan = flat_plan(10);
    auto rings = predistribute_keyrings(plan, 4, 18);
    VoteState st = make_vote_state(ClientId{2}, rings, 55);
    const ClientId member = st.voting_members.front();

    REQUIRE_THROWS_AS(cast_vote(ClientId{9999}, st), NotVotingMember);

    const Bytes vote = cast_vote(member, st);
    REQUIRE(vote == st.voting_keys.at(member));
    REQUIRE(verify_and_mark(st, vote));
    REQUIRE(st.marked.count(member) == 1);
    // replaying the same vote does not grow the marked set
    REQUIRE_FALSE(verify_and_mark(st, vote));
    REQUIRE(st.marked.size() == 1);
    // garbage is ignored
    REQUIRE_FALSE(verify_and_mark(st, Rng(1).bytes(32)));
    REQUIRE(st.marked.size() == 1);
}

TEST_CASE("quorum fires exactly at the threshold", "[keying]") {
    auto plan = flat_plan(12);
    auto rings = predistribute_keyrings(plan, 5, 19);
    VoteState st = make_vote_state(ClientId{3}, rings, 56);
    REQUIRE(st.threshold >= 2);
    std::size_t cast = 0;
    for (auto m : st.voting_members) {
        if (cast + 1 == st.threshold) break;
        verify_and_mark(st, cast_vote(m, st));
        cast++;
    }
    REQUIRE_FALSE(st.revocation_due());  // threshold - 1 marked votes
    verify_and_mark(st, cast_vote(st.voting_members[cast], st));
    REQUIRE(st.revocation_due());
}

TEST_CASE("random forgeries never become marked votes", "[keying][slow]") {
    auto plan = flat_plan(8);
    auto rings = predistribute_keyrings(plan, 3, 20);
    VoteState st = make_vote_state(ClientId{1}, rings, 57);
    Rng rng(58);
    for (int i = 0; i < 100000; ++i) {
        REQUIRE_FALSE(verify_and_mark(st, rng.bytes(32)));
    }
    REQUIRE(st.marked.empty());
}

TEST_CASE("revocation cuts rings, keys and eligibility", "[keying]") {
    auto plan = flat_plan(10);
    auto rings = predistribute_keyrings(plan, 3, 21);
    auto table = establish_comm_keys(plan, rings, 30);
    const ClientId suspect{5};
    const auto partners = rings.at(suspect).entries;
    REQUIRE_FALSE(partners.empty());

    auto outcome = revoke(plan, rings, table, suspect, 99);
    REQUIRE(outcome.affected.size() == partners.size());
    REQUIRE(rings.at(suspect).entries.empty());
    for (const auto& e : partners) {
        REQUIRE(rings.at(e.peer).find(suspect) == nullptr);
        REQUIRE_FALSE(table.has(suspect, e.peer));
    }
    REQUIRE(table.neighbors(suspect).empty());
    REQUIRE(plan.clusters[0].targets.count(suspect) == 0);
    REQUIRE(plan.clusters[0].revoked.count(suspect) == 1);

    // unknown client: no-op
    auto none = revoke(plan, rings, table, ClientId{4242}, 99);
    REQUIRE(none.affected.empty());
}

TEST_CASE("revoking the only possible leader is infeasible", "[keying]") {
    auto plan = flat_plan(6);
    auto rings = predistribute_keyrings(plan, 2, 22);
    auto table = establish_comm_keys(plan, rings, 31);
    // leader 0 is the only server-adjacent member in flat_plan
    REQUIRE_THROWS_AS(revoke(plan, rings, table, ClientId{0}, 99), ClusterInfeasible);
}

TEST_CASE("revoking a leader elects a server-adjacent replacement", "[keying]") {
    auto plan = flat_plan(6);
    plan.clusters[0].server_adjacent.insert(ClientId{3});
    auto rings = predistribute_keyrings(plan, 2, 23);
    auto table = establish_comm_keys(plan, rings, 32);
    auto outcome = revoke(plan, rings, table, ClientId{0}, 99);
    REQUIRE(outcome.leader_replaced);
    REQUIRE(plan.clusters[0].leader == ClientId{3});
    REQUIRE(plan.clusters[0].targets.count(ClientId{3}) == 1);
}

TEST_CASE("rekey with an empty set changes nothing", "[keying]") {
    auto plan = flat_plan(10);
    auto rings = predistribute_keyrings(plan, 3, 24);
    auto table = establish_comm_keys(plan, rings, 33);
    auto rings_before = rings;
    rekey(plan, rings, table, {}, 3, 1000);
    REQUIRE(rings == rings_before);
}

TEST_CASE("rekey touches only the affected clients", "[keying]") {
    auto plan = flat_plan(40);
    auto rings = predistribute_keyrings(plan, 11, 25);
    auto table = establish_comm_keys(plan, rings, 34);
    const ClientId suspect{7};
    auto outcome = revoke(plan, rings, table, suspect, 99);
    const auto rings_after_revoke = rings;

    std::set<ClientId> affected(outcome.affected.begin(), outcome.affected.end());
    rekey(plan, rings, table, affected, 11, 2000);

    std::size_t changed = 0;
    for (const auto& [id, ring] : rings) {
        if (id == suspect) {
            REQUIRE(ring.entries.empty());
            continue;
        }
        if (ring != rings_after_revoke.at(id)) {
            changed++;
            REQUIRE(affected.count(id) == 1);  // only affected rings may change
        }
    }
    REQUIRE(changed > 0);
    require_symmetric(rings);
    // nobody re-partners with the revoked client
    for (const auto& [id, ring] : rings) REQUIRE(ring.find(suspect) == nullptr);
}

TEST_CASE("whole-cluster rekey refreshes every communication key", "[keying]") {
    auto plan = flat_plan(12);
    auto rings = predistribute_keyrings(plan, 3, 26);
    auto table = establish_comm_keys(plan, rings, 35);
    std::map<std::uint64_t, Bytes> before(table.entries().begin(), table.entries().end());

    std::set<ClientId> everyone(plan.clusters[0].members.begin(),
                                plan.clusters[0].members.end());
    rekey(plan, rings, table, everyone, 3, 3000);
    require_symmetric(rings);
    for (const auto& [pair, key] : table.entries()) {
        auto it = before.find(pair);
        if (it != before.end()) REQUIRE(key != it->second);
    }
}

TEST_CASE("ring graphs at the threshold size are almost surely connected", "[keying][slow]") {
    // smaller companion to the acceptance sweep
    std::size_t connected = 0;
    const std::size_t trials = 200;
    for (std::size_t t = 0; t < trials; ++t) {
        auto rings = predistribute_keyrings(flat_plan(50), ring_size(50, 0.99), 7000 + t);
        AdjacencyList g(50);
        for (const auto& [id, ring] : rings) {
            for (const auto& e : ring.entries) {
                if (id.value < e.peer.value) g.add_edge(id.value, e.peer.value);
            }
        }
        if (is_connected(g)) connected++;
    }
    REQUIRE(static_cast<double>(connected) / trials >= 0.97);
}
