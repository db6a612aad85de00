#pragma once

// Authenticated-encryption envelope service. AES-128-GCM (via OpenSSL EVP)
// with a 96-bit nonce and 128-bit tag wraps every relayed payload together
// with its logical timestamp. Decryption returns nothing on any tag mismatch;
// there is no partial plaintext on failure. Nonce uniqueness per key is a
// hard invariant enforced by a registry owned by the simulation loop.

#include <openssl/evp.h>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "cfl/core.hpp"
#include "cfl/model.hpp"

namespace cfl {

inline constexpr std::size_t kKeyBytes = 16;    // AES-128
inline constexpr std::size_t kNonceBytes = 12;  // GCM standard nonce
inline constexpr std::size_t kTagBytes = 16;

// K <- AE.Gen(1^kappa). Only the 128-bit configuration is supported.
inline Bytes ae_gen(std::size_t kappa_bits, Rng& rng) {
    if (kappa_bits != 128) {
        throw UnsupportedKeyLength("key length " + std::to_string(kappa_bits) +
                                   " unsupported, use 128");
    }
    return rng.bytes(kKeyBytes);
}

namespace detail {

struct EvpCtx {
    EVP_CIPHER_CTX* ctx;
    EvpCtx() : ctx(EVP_CIPHER_CTX_new()) {}
    ~EvpCtx() { EVP_CIPHER_CTX_free(ctx); }
};

inline EVP_CIPHER_CTX* gcm_ctx() {
    thread_local EvpCtx holder;
    return holder.ctx;
}

}  // namespace detail

// Raw seal: returns ciphertext with the 16-byte tag appended.
inline Bytes aead_seal(const Bytes& key, const Bytes& nonce, const Bytes& plaintext) {
    EVP_CIPHER_CTX* ctx = detail::gcm_ctx();
    Bytes out(plaintext.size() + kTagBytes);
    int len = 0;
    if (EVP_EncryptInit_ex(ctx, EVP_aes_128_gcm(), nullptr, key.data(), nonce.data()) != 1 ||
        (!plaintext.empty() &&
         EVP_EncryptUpdate(ctx, out.data(), &len, plaintext.data(),
                           static_cast<int>(plaintext.size())) != 1)) {
        throw std::runtime_error("AES-GCM encrypt failed");
    }
    int fin = 0;
    if (EVP_EncryptFinal_ex(ctx, out.data() + len, &fin) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, kTagBytes,
                            out.data() + plaintext.size()) != 1) {
        throw std::runtime_error("AES-GCM finalize failed");
    }
    return out;
}

// Raw open: nullopt on authentication failure (tampered, truncated, wrong key).
inline std::optional<Bytes> aead_open(const Bytes& key, const Bytes& nonce, const Bytes& sealed) {
    if (sealed.size() < kTagBytes) return std::nullopt;
    EVP_CIPHER_CTX* ctx = detail::gcm_ctx();
    const std::size_t ct_len = sealed.size() - kTagBytes;
    Bytes out(ct_len);
    Bytes tag(sealed.end() - kTagBytes, sealed.end());
    int len = 0;
    if (EVP_DecryptInit_ex(ctx, EVP_aes_128_gcm(), nullptr, key.data(), nonce.data()) != 1) {
        throw std::runtime_error("AES-GCM decrypt init failed");
    }
    if (ct_len > 0 &&
        EVP_DecryptUpdate(ctx, out.data(), &len, sealed.data(), static_cast<int>(ct_len)) != 1) {
        return std::nullopt;
    }
    if (EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) != 1) {
        throw std::runtime_error("AES-GCM set tag failed");
    }
    int fin = 0;
    if (EVP_DecryptFinal_ex(ctx, out.data() + len, &fin) != 1) return std::nullopt;
    return out;
}

inline Bytes sha256(const Bytes& data) {
    Bytes digest(32);
    unsigned int n = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &n, EVP_sha256(), nullptr) != 1 ||
        n != 32) {
        throw std::runtime_error("sha256 failed");
    }
    return digest;
}

// Name of the vote hash, recorded in round reports for reproducibility.
inline constexpr const char* kVoteHashName = "sha256";

// ---- stamped payloads ---------------------------------------------------------

// Logical time of a relay step plus simulated wall clock.
struct Timestamp {
    std::uint32_t round{0};
    std::uint32_t step{0};
    std::uint64_t wall_ms{0};
    bool operator==(const Timestamp&) const = default;
};

struct StampedPayload {
    Bytes payload;  // serialized model/fixed vector
    Timestamp stamp;
    bool operator==(const StampedPayload&) const = default;
};

inline Bytes serialize(const StampedPayload& p) {
    Bytes out;
    out.reserve(p.payload.size() + 20);
    put_u32(out, static_cast<std::uint32_t>(p.payload.size()));
    out.insert(out.end(), p.payload.begin(), p.payload.end());
    put_u32(out, p.stamp.round);
    put_u32(out, p.stamp.step);
    put_u64(out, p.stamp.wall_ms);
    return out;
}

inline StampedPayload deserialize_stamped(const Bytes& in) {
    std::size_t pos = 0;
    const std::uint32_t n = get_u32(in, pos);
    if (pos + n > in.size()) throw ConfigError("truncated stamped payload");
    StampedPayload p;
    p.payload.assign(in.begin() + pos, in.begin() + pos + n);
    pos += n;
    p.stamp.round = get_u32(in, pos);
    p.stamp.step = get_u32(in, pos);
    p.stamp.wall_ms = get_u64(in, pos);
    return p;
}

// ---- envelopes ----------------------------------------------------------------

struct Envelope {
    Bytes nonce;        // 12 bytes, unique per key
    Bytes sealed;       // ciphertext Y with tag sigma appended
    ClientId key_a{};   // unordered pair hint for tracing
    ClientId key_b{};

    std::size_t wire_bytes() const { return nonce.size() + sealed.size(); }
};

// Deterministic nonce layout: round | step | sender counter.
inline Bytes make_nonce(std::uint32_t round, std::uint32_t step, std::uint32_t counter) {
    Bytes n;
    n.reserve(kNonceBytes);
    put_u32(n, round);
    put_u32(n, step);
    put_u32(n, counter);
    return n;
}

// Tracks (key, nonce) pairs for a whole run; reuse is a protocol bug, not a
// recoverable condition.
class NonceRegistry {
public:
    void check_and_record(const Bytes& key, const Bytes& nonce) {
        auto& seen = used_[std::string(key.begin(), key.end())];
        if (!seen.insert(std::string(nonce.begin(), nonce.end())).second) {
            throw NonceReuse("nonce reused under the same key");
        }
    }

private:
    std::map<std::string, std::set<std::string>> used_;
};

inline Envelope ae_encrypt(const StampedPayload& payload, const Bytes& key, const Bytes& nonce,
                           NonceRegistry& registry) {
    registry.check_and_record(key, nonce);
    Envelope env;
    env.nonce = nonce;
    env.sealed = aead_seal(key, nonce, serialize(payload));
    return env;
}

inline std::optional<StampedPayload> ae_decrypt(const Envelope& env, const Bytes& key) {
    auto plain = aead_open(key, env.nonce, env.sealed);
    if (!plain) return std::nullopt;
    return deserialize_stamped(*plain);
}

// Accepts a payload whose logical time matches and whose wall clock is within
// the replay window.
inline bool validate_timestamp(const StampedPayload& payload, std::uint32_t expected_round,
                               std::uint32_t expected_step, std::uint64_t now_ms,
                               std::uint64_t window_ms) {
    if (payload.stamp.round != expected_round || payload.stamp.step != expected_step) return false;
    const std::uint64_t lo = payload.stamp.wall_ms;
    const std::uint64_t skew = now_ms >= lo ? now_ms - lo : lo - now_ms;
    return skew <= window_ms;
}

}  // namespace cfl
