#include "ebrc/crypto.hpp"

#include <cmath>
#include <openssl/sha.h>

#include <bit>
#include <cstring>

namespace ebrc {

double Hash256::unit_fraction() const {
    // The leading 64 bits carry more precision than a double can hold.
    std::uint64_t hi = 0;
    for (int i = 0; i < 8; ++i) hi = (hi << 8) | bytes[i];
    return std::ldexp(static_cast<double>(hi), -64);
}

std::string Hash256::hex() const { return short_hex(bytes.size()); }

std::string Hash256::short_hex(std::size_t nbytes) const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(nbytes * 2);
    for (std::size_t i = 0; i < nbytes && i < bytes.size(); ++i) {
        out.push_back(digits[bytes[i] >> 4]);
        out.push_back(digits[bytes[i] & 0xf]);
    }
    return out;
}

Hash256 Hash256::from_hex(const std::string& hex) {
    if (hex.size() != 64) throw std::invalid_argument("hash hex must be 64 characters");
    auto nibble = [](char c) -> std::uint8_t {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument("bad hex digit");
    };
    Hash256 h;
    for (std::size_t i = 0; i < 32; ++i)
        h.bytes[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return h;
}

Hash256 sha256(std::span<const std::uint8_t> data) {
    Hash256 out;
    SHA256(data.data(), data.size(), out.bytes.data());
    return out;
}

DigestWriter& DigestWriter::u8(std::uint8_t v) {
    buf_.push_back(v);
    return *this;
}

DigestWriter& DigestWriter::u32(std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> shift));
    return *this;
}

DigestWriter& DigestWriter::u64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> shift));
    return *this;
}

DigestWriter& DigestWriter::f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

DigestWriter& DigestWriter::hash(const Hash256& h) {
    buf_.insert(buf_.end(), h.bytes.begin(), h.bytes.end());
    return *this;
}

DigestWriter& DigestWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
    return *this;
}

DigestWriter& DigestWriter::bytes(std::span<const std::uint8_t> b) {
    u32(static_cast<std::uint32_t>(b.size()));
    buf_.insert(buf_.end(), b.begin(), b.end());
    return *this;
}

KeyRegistry KeyRegistry::generate(std::uint64_t scenario_seed, std::span<const NodeId> owners) {
    KeyRegistry reg;
    for (auto id : owners) reg.add(id, scenario_seed);
    return reg;
}

const KeyPair& KeyRegistry::add(NodeId owner, std::uint64_t scenario_seed) {
    KeyPair kp;
    kp.owner = owner;
    kp.secret_key = DigestWriter{}.str("ebrc/secret-key").u64(scenario_seed).u32(owner).finish();
    kp.public_key = DigestWriter{}.str("ebrc/public-key").hash(kp.secret_key).finish();
    secret_by_public_[kp.public_key] = kp.secret_key;
    return by_owner_[owner] = kp;
}

const KeyPair& KeyRegistry::keys_of(NodeId owner) const {
    auto it = by_owner_.find(owner);
    if (it == by_owner_.end()) throw std::out_of_range("no key registered for node " + std::to_string(owner));
    return it->second;
}

std::optional<SecretKey> KeyRegistry::secret_for(const PublicKey& pk) const {
    auto it = secret_by_public_.find(pk);
    if (it == secret_by_public_.end()) return std::nullopt;
    return it->second;
}

Signature KeyRegistry::sign(const SecretKey& sk, const Hash256& message_digest) {
    return DigestWriter{}.str("ebrc/sig").hash(sk).hash(message_digest).finish();
}

bool KeyRegistry::verify(NodeId signer, const Hash256& message_digest, const Signature& sig) const {
    auto it = by_owner_.find(signer);
    if (it == by_owner_.end()) return false;
    return sign(it->second.secret_key, message_digest) == sig;
}

}  // namespace ebrc
