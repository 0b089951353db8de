#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ebrc/core.hpp"

namespace ebrc {

Hash256 sha256(std::span<const std::uint8_t> data);

// Incremental canonical encoder feeding a digest. Integers are written
// big-endian at fixed width so encodings are platform independent.
class DigestWriter {
  public:
    DigestWriter& u8(std::uint8_t v);
    DigestWriter& u32(std::uint32_t v);
    DigestWriter& u64(std::uint64_t v);
    DigestWriter& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
    DigestWriter& f64(double v);
    DigestWriter& hash(const Hash256& h);
    DigestWriter& str(std::string_view s);
    DigestWriter& bytes(std::span<const std::uint8_t> b);

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    Hash256 finish() const { return sha256(buf_); }

  private:
    std::vector<std::uint8_t> buf_;
};

using PublicKey = Hash256;
using SecretKey = Hash256;
using Signature = Hash256;

struct KeyPair {
    NodeId owner = 0;
    PublicKey public_key;
    SecretKey secret_key;
};

// Keyed-digest signatures with a trusted verification oracle. The registry
// maps every public key back to its secret so verification can recompute
// the tag; this is a simulation stand-in for a real signature scheme and is
// immutable once the scenario is set up.
class KeyRegistry {
  public:
    KeyRegistry() = default;

    // Deterministic key generation from the scenario seed.
    static KeyRegistry generate(std::uint64_t scenario_seed, std::span<const NodeId> owners);

    const KeyPair& add(NodeId owner, std::uint64_t scenario_seed);
    const KeyPair& keys_of(NodeId owner) const;
    bool contains(NodeId owner) const { return by_owner_.contains(owner); }
    const PublicKey& public_key(NodeId owner) const { return keys_of(owner).public_key; }
    std::optional<SecretKey> secret_for(const PublicKey& pk) const;

    static Signature sign(const SecretKey& sk, const Hash256& message_digest);
    bool verify(NodeId signer, const Hash256& message_digest, const Signature& sig) const;

  private:
    std::map<NodeId, KeyPair> by_owner_;
    std::map<PublicKey, SecretKey> secret_by_public_;
};

}  // namespace ebrc
