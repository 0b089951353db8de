#include "doctest.h"

#include <string>

#include "ebrc/crypto.hpp"
#include "ebrc/messages.hpp"

using namespace ebrc;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(sha256(bytes_of("abc")).hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256(bytes_of("")).hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("hex round trip and unit fraction") {
    const auto h = sha256(bytes_of("round trip"));
    CHECK(Hash256::from_hex(h.hex()) == h);
    CHECK(h.short_hex(4).size() == 8);

    Hash256 half;
    half.bytes[0] = 0x80;
    CHECK(half.unit_fraction() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(Hash256{}.unit_fraction() == 0.0);
    Hash256 quarter;
    quarter.bytes[0] = 0x40;
    CHECK(quarter.unit_fraction() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("digest writer encodes big endian fixed width") {
    DigestWriter w;
    w.u32(0x01020304).u64(5);
    const std::vector<std::uint8_t> expected{1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 5};
    CHECK(w.buffer() == expected);

    // Length prefix keeps ("ab","c") and ("a","bc") apart.
    CHECK(DigestWriter().str("ab").str("c").finish() != DigestWriter().str("a").str("bc").finish());
}

TEST_CASE("key generation is deterministic per seed") {
    const std::vector<NodeId> owners{0, 1, 2};
    const auto a = KeyRegistry::generate(7, owners);
    const auto b = KeyRegistry::generate(7, owners);
    const auto c = KeyRegistry::generate(8, owners);
    for (auto id : owners) {
        CHECK(a.public_key(id) == b.public_key(id));
        CHECK(a.public_key(id) != c.public_key(id));
    }
    CHECK(a.public_key(0) != a.public_key(1));
    CHECK_THROWS(a.keys_of(42));
}

TEST_CASE("signatures verify only for the signer and message") {
    const std::vector<NodeId> owners{0, 1};
    const auto keys = KeyRegistry::generate(3, owners);
    const auto msg = sha256(bytes_of("block"));
    const auto sig = KeyRegistry::sign(keys.keys_of(0).secret_key, msg);
    CHECK(keys.verify(0, msg, sig));
    CHECK_FALSE(keys.verify(1, msg, sig));
    CHECK_FALSE(keys.verify(0, sha256(bytes_of("other")), sig));
    CHECK_FALSE(keys.verify(99, msg, sig));
    CHECK(keys.secret_for(keys.public_key(1)) == keys.keys_of(1).secret_key);
}

TEST_CASE("signed messages reject tampering") {
    const std::vector<NodeId> owners{0, 1, 2, 3};
    const auto keys = KeyRegistry::generate(11, owners);
    Commit c;
    c.view = 2;
    c.sn = 5;
    c.digest = sha256(bytes_of("d"));
    c.sender = 1;
    Message m = c;
    sign(m, keys);
    CHECK(verify(m, keys));
    CHECK(tag(m) == "commit");
    CHECK(sender_of(m) == 1);
    CHECK(carried_digest(m) == c.digest);

    auto tampered = std::get<Commit>(m);
    tampered.sn = 6;
    CHECK_FALSE(verify(Message{tampered}, keys));

    auto forged = std::get<Commit>(m);
    forged.sender = 2;
    CHECK_FALSE(verify(Message{forged}, keys));
}

TEST_CASE("exit commit needs both signatures") {
    const std::vector<NodeId> owners{0, 1, 2, 3};
    const auto keys = KeyRegistry::generate(5, owners);
    ExitCommit ec;
    ec.node = 2;
    ec.height = 4;
    ec.master = 0;
    sign_exit_commit(ec, keys);
    CHECK(verify(Message{ec}, keys));
    auto bad_node = ec;
    bad_node.node_sig = KeyRegistry::sign(keys.keys_of(3).secret_key, exit_request_digest(2, 4));
    CHECK_FALSE(verify(Message{bad_node}, keys));
    auto bad_master = ec;
    bad_master.master_sig = KeyRegistry::sign(keys.keys_of(1).secret_key, signing_digest(Message{ec}));
    CHECK_FALSE(verify(Message{bad_master}, keys));
}

TEST_CASE("message tag classes") {
    for (auto t : {"prepare", "commit", "reply", "pre_prepare", "pbft_prepare"}) CHECK(is_consensus_phase(t));
    for (auto t : {"erequest", "exit_commit", "change", "urequest", "join_commit"}) CHECK(is_membership(t));
    CHECK_FALSE(is_consensus_phase("view_change"));
    CHECK_FALSE(is_consensus_phase("request"));
    CHECK_FALSE(is_membership("commit"));
}

TEST_CASE("block digest ignores the view") {
    const auto tx = Hash256{};
    const auto prev = sha256(bytes_of("genesis"));
    CHECK(Block::compute_digest(1, prev, tx) == Block::compute_digest(1, prev, tx));
    CHECK(Block::compute_digest(1, prev, tx) != Block::compute_digest(2, prev, tx));
    Transaction a{kClientIdBase, 0, 10, 64, 1};
    Transaction b{kClientIdBase, 1, 11, 64, 2};
    CHECK(batch_digest({a, b}) != batch_digest({b, a}));
    CHECK(batch_digest({a, b}) == batch_digest({a, b}));
}
