#include "catch_amalgamated.hpp"

#include "cfl/crypto.hpp"

using namespace cfl;

TEST_CASE("key generation policy", "[crypto]") {
    Rng rng(1);
    Bytes key = ae_gen(128, rng);
    REQUIRE(key.size() == 16);
    REQUIRE_THROWS_AS(ae_gen(64, rng), UnsupportedKeyLength);
    REQUIRE_THROWS_AS(ae_gen(256, rng), UnsupportedKeyLength);

    Rng a(42), b(42);
    REQUIRE(ae_gen(128, a) == ae_gen(128, b));
}

static StampedPayload sample_payload(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return {rng.bytes(n), Timestamp{3, 7, 12345}};
}

TEST_CASE("seal and open round trip", "[crypto]") {
    Rng rng(2);
    const Bytes key = ae_gen(128, rng);
    NonceRegistry registry;
    const StampedPayload payload = sample_payload(100, 11);
    Envelope env = ae_encrypt(payload, key, make_nonce(3, 7, 0), registry);
    auto back = ae_decrypt(env, key);
    REQUIRE(back.has_value());
    REQUIRE(*back == payload);
}

TEST_CASE("round trip holds over random payloads", "[crypto][slow]") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const Bytes key = rng.bytes(16);
        const Bytes nonce = rng.bytes(12);
        const StampedPayload payload{rng.bytes(1 + rng.index(64)),
                                     Timestamp{static_cast<std::uint32_t>(rng.index(100)),
                                               static_cast<std::uint32_t>(rng.index(100)),
                                               rng.next_u64() >> 20}};
        const Bytes sealed = aead_seal(key, nonce, serialize(payload));
        auto open = aead_open(key, nonce, sealed);
        REQUIRE(open.has_value());
        REQUIRE(deserialize_stamped(*open) == payload);
    }
}

TEST_CASE("any single-bit corruption fails authentication", "[crypto]") {
    Rng rng(4);
    const Bytes key = ae_gen(128, rng);
    NonceRegistry registry;
    Envelope env = ae_encrypt(sample_payload(64, 12), key, make_nonce(0, 0, 1), registry);

    // exhaustive over the 128 tag bits (the tag is the trailing 16 bytes)
    const std::size_t tag_start = env.sealed.size() - kTagBytes;
    for (std::size_t bit = tag_start * 8; bit < env.sealed.size() * 8; ++bit) {
        Envelope bad = env;
        bad.sealed[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        REQUIRE_FALSE(ae_decrypt(bad, key).has_value());
    }
    // every ciphertext bit as well (payload is small enough to afford it)
    for (std::size_t bit = 0; bit < tag_start * 8; ++bit) {
        Envelope bad = env;
        bad.sealed[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        REQUIRE_FALSE(ae_decrypt(bad, key).has_value());
    }
}

TEST_CASE("wrong key and truncation fail authentication", "[crypto]") {
    Rng rng(5);
    const Bytes key = ae_gen(128, rng);
    const Bytes other = ae_gen(128, rng);
    NonceRegistry registry;
    Envelope env = ae_encrypt(sample_payload(32, 13), key, make_nonce(0, 0, 2), registry);
    REQUIRE_FALSE(ae_decrypt(env, other).has_value());

    Envelope truncated = env;
    truncated.sealed.resize(truncated.sealed.size() - 1);
    REQUIRE_FALSE(ae_decrypt(truncated, key).has_value());
    Envelope gutted = env;
    gutted.sealed.resize(kTagBytes - 1);
    REQUIRE_FALSE(ae_decrypt(gutted, key).has_value());
}

TEST_CASE("nonce reuse under one key is a hard error", "[crypto]") {
    Rng rng(6);
    const Bytes key = ae_gen(128, rng);
    const Bytes key2 = ae_gen(128, rng);
    NonceRegistry registry;
    const StampedPayload payload = sample_payload(16, 14);
    (void)ae_encrypt(payload, key, make_nonce(1, 2, 3), registry);
    REQUIRE_THROWS_AS(ae_encrypt(payload, key, make_nonce(1, 2, 3), registry), NonceReuse);
    // same nonce under a different key is fine
    (void)ae_encrypt(payload, key2, make_nonce(1, 2, 3), registry);
    // different counter under the same key is fine
    (void)ae_encrypt(payload, key, make_nonce(1, 2, 4), registry);
}

TEST_CASE("nonce layout is unique per (round, step, counter)", "[crypto]") {
    REQUIRE(make_nonce(1, 2, 3).size() == kNonceBytes);
    REQUIRE(make_nonce(1, 2, 3) == make_nonce(1, 2, 3));
    REQUIRE(make_nonce(1, 2, 3) != make_nonce(1, 3, 2));
    REQUIRE(make_nonce(0, 0, 1) != make_nonce(1, 0, 0));
}

TEST_CASE("timestamp validation window", "[crypto]") {
    StampedPayload p{{}, Timestamp{5, 9, 10000}};
    // exact logical match, zero skew
    REQUIRE(validate_timestamp(p, 5, 9, 10000, 30000));
    // stale round or step is a replay
    REQUIRE_FALSE(validate_timestamp(p, 6, 9, 10000, 30000));
    REQUIRE_FALSE(validate_timestamp(p, 5, 8, 10000, 30000));
    // both sides of the skew boundary
    REQUIRE(validate_timestamp(p, 5, 9, 10000 + 30000, 30000));
    REQUIRE_FALSE(validate_timestamp(p, 5, 9, 10000 + 30001, 30000));
    REQUIRE(validate_timestamp(p, 5, 9, 10000 - 10000, 30000));
}

TEST_CASE("stamped payload serialization round trips", "[crypto]") {
    const StampedPayload p = sample_payload(40, 15);
    REQUIRE(deserialize_stamped(serialize(p)) == p);
    Bytes bad = serialize(p);
    bad.resize(10);
    REQUIRE_THROWS_AS(deserialize_stamped(bad), ConfigError);
}

TEST_CASE("vote hash is second-preimage hard in practice", "[crypto]") {
    const Bytes v = Rng(16).bytes(32);
    const Bytes h = sha256(v);
    REQUIRE(h.size() == 32);
    REQUIRE(sha256(v) == h);
    Bytes w = v;
    w[0] ^= 1;
    REQUIRE(sha256(w) != h);
}
