#include "ebrc/messages.hpp"

namespace ebrc {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void write_tx(DigestWriter& w, const Transaction& tx) {
    w.u32(tx.client).u64(tx.seq).i64(tx.timestamp).u32(tx.payload_size).u64(tx.payload_seed);
}

void write_txs(DigestWriter& w, const std::vector<Transaction>& txs) {
    w.u32(static_cast<std::uint32_t>(txs.size()));
    for (const auto& tx : txs) write_tx(w, tx);
}

void write_commit(DigestWriter& w, const Commit& c) {
    w.str("commit").u64(c.view).i64(c.timestamp).hash(c.digest).u64(c.sn).u8(static_cast<std::uint8_t>(c.verdict)).u32(c.sender);
}

// Who must have produced the (primary) signature on a message.
NodeId signer_of(const Message& m) {
    return std::visit(overloaded{
                          [](const Request& r) { return r.client; },
                          [](const ERequest& r) { return r.node; },
                          [](const ExitCommit& r) { return r.node; },
                          [](const Change& r) { return r.master; },
                          [](const Urequest& r) { return r.node; },
                          [](const VrfConnect& r) { return r.node; },
                          [](const auto& r) { return r.sender; },
                      },
                      m);
}

Signature& sig_slot(Message& m) {
    return std::visit(overloaded{
                          [](ExitCommit& r) -> Signature& { return r.node_sig; },
                          [](auto& r) -> Signature& { return r.sig; },
                      },
                      m);
}

const Signature& sig_slot(const Message& m) {
    return std::visit(overloaded{
                          [](const ExitCommit& r) -> const Signature& { return r.node_sig; },
                          [](const auto& r) -> const Signature& { return r.sig; },
                      },
                      m);
}

}  // namespace

Hash256 Transaction::digest() const {
    DigestWriter w;
    w.str("tx");
    write_tx(w, *this);
    return w.finish();
}

Hash256 batch_digest(const std::vector<Transaction>& txs) {
    DigestWriter w;
    w.str("batch").u32(static_cast<std::uint32_t>(txs.size()));
    for (const auto& tx : txs) w.hash(tx.digest());
    return w.finish();
}

Hash256 Block::compute_digest(std::uint64_t height, const Hash256& previous, const Hash256& tx_digest) {
    return DigestWriter{}.str("block").u64(height).hash(previous).hash(tx_digest).finish();
}

std::string_view to_string(Evidence e) {
    switch (e) {
        case Evidence::BadSignature: return "bad_signature";
        case Evidence::BadProposal: return "bad_proposal";
        case Evidence::BadVrfProof: return "bad_vrf_proof";
        case Evidence::ReputationMismatch: return "reputation_mismatch";
        case Evidence::Silent: return "silent";
        case Evidence::Ousted: return "ousted";
    }
    return "unknown";
}

std::string_view tag(const Message& m) {
    return std::visit(overloaded{
                          [](const Request&) { return std::string_view{"request"}; },
                          [](const Prepare&) { return std::string_view{"prepare"}; },
                          [](const Commit&) { return std::string_view{"commit"}; },
                          [](const Reply&) { return std::string_view{"reply"}; },
                          [](const ViewChange&) { return std::string_view{"view_change"}; },
                          [](const Report&) { return std::string_view{"report"}; },
                          [](const PrePrepare&) { return std::string_view{"pre_prepare"}; },
                          [](const PrepareVote&) { return std::string_view{"pbft_prepare"}; },
                          [](const BlockSync&) { return std::string_view{"block_sync"}; },
                          [](const ERequest&) { return std::string_view{"erequest"}; },
                          [](const ExitCommit&) { return std::string_view{"exit_commit"}; },
                          [](const Change&) { return std::string_view{"change"}; },
                          [](const Urequest&) { return std::string_view{"urequest"}; },
                          [](const JoinCommit&) { return std::string_view{"join_commit"}; },
                          [](const VrfConnect&) { return std::string_view{"vrf_connect"}; },
                      },
                      m);
}

NodeId sender_of(const Message& m) {
    return std::visit(overloaded{
                          [](const ERequest& r) { return r.node; },
                          [](const ExitCommit& r) { return r.master; },
                          [](const Change& r) { return r.master; },
                          [](const Urequest& r) { return r.node; },
                          [](const VrfConnect& r) { return r.node; },
                          [](const auto& r) { return r.sender; },
                      },
                      m);
}

Hash256 signing_digest(const Message& m) {
    DigestWriter w;
    std::visit(overloaded{
                   [&](const Request& r) {
                       w.str("request").i64(r.timestamp);
                       write_tx(w, r.tx);
                       w.hash(r.tx_digest).u32(r.client);
                   },
                   [&](const Prepare& r) {
                       w.str("prepare").u64(r.height).u64(r.view).i64(r.timestamp);
                       write_txs(w, r.txs);
                       w.hash(r.digest).u32(r.sender);
                   },
                   [&](const Commit& r) { write_commit(w, r); },
                   [&](const Reply& r) {
                       w.str("reply").u32(r.client).i64(r.timestamp).hash(r.digest).u64(r.height).u32(r.committee_size);
                       w.u8(static_cast<std::uint8_t>(r.verdict)).u32(r.sender);
                   },
                   [&](const ViewChange& r) { w.str("view_change").u64(r.height).u64(r.proposed_view).u32(r.sender); },
                   [&](const Report& r) {
                       w.str("report").u32(r.accused).u8(static_cast<std::uint8_t>(r.evidence)).u64(r.height).u32(r.sender);
                   },
                   [&](const PrePrepare& r) {
                       w.str("pre_prepare").u64(r.height).u64(r.view).i64(r.timestamp);
                       write_txs(w, r.txs);
                       w.hash(r.digest).u32(r.sender);
                   },
                   [&](const PrepareVote& r) { w.str("pbft_prepare").u64(r.height).u64(r.view).hash(r.digest).u32(r.sender); },
                   [&](const BlockSync& r) {
                       w.str("block_sync").u64(r.block.height).u64(r.block.view).hash(r.block.digest);
                       w.hash(r.block.previous_hash).hash(r.block.tx_digest);
                       write_txs(w, r.block.txs);
                       w.u32(static_cast<std::uint32_t>(r.certificate.size()));
                       for (const auto& c : r.certificate) {
                           write_commit(w, c);
                           w.hash(c.sig);
                       }
                       w.u32(r.sender);
                   },
                   [&](const ERequest& r) { w.str("erequest").u32(r.node).u64(r.effective_height); },
                   [&](const ExitCommit& r) { w.str("exit_commit").u32(r.node).u64(r.height).u32(r.master); },
                   [&](const Change& r) { w.str("change").u32(r.node).u64(r.height).u32(r.master); },
                   [&](const Urequest& r) { w.str("urequest").u32(r.node).f64(r.reputation).u64(r.height); },
                   [&](const JoinCommit& r) { w.str("join_commit").u32(r.node).u64(r.height).u32(r.sender); },
                   [&](const VrfConnect& r) {
                       w.str("vrf_connect").u32(r.node).u64(r.epoch).hash(r.seed).bytes(r.proof);
                   },
               },
               m);
    return w.finish();
}

Hash256 carried_digest(const Message& m) {
    return std::visit(overloaded{
                          [](const Request& r) { return r.tx_digest; },
                          [](const Prepare& r) { return r.digest; },
                          [](const Commit& r) { return r.digest; },
                          [](const Reply& r) { return r.digest; },
                          [](const PrePrepare& r) { return r.digest; },
                          [](const PrepareVote& r) { return r.digest; },
                          [](const BlockSync& r) { return r.block.digest; },
                          [](const auto&) { return Hash256{}; },
                      },
                      m);
}

void sign(Message& m, const KeyRegistry& keys) {
    if (auto* ec = std::get_if<ExitCommit>(&m)) {
        sign_exit_commit(*ec, keys);
        return;
    }
    const auto digest = signing_digest(m);
    sig_slot(m) = KeyRegistry::sign(keys.keys_of(signer_of(m)).secret_key, digest);
}

Hash256 exit_request_digest(NodeId node, std::uint64_t height) { return signing_digest(Message{ERequest{node, height, {}}}); }

void sign_exit_commit(ExitCommit& m, const KeyRegistry& keys) {
    m.node_sig = KeyRegistry::sign(keys.keys_of(m.node).secret_key, exit_request_digest(m.node, m.height));
    m.master_sig = KeyRegistry::sign(keys.keys_of(m.master).secret_key, signing_digest(Message{m}));
}

bool verify(const Message& m, const KeyRegistry& keys) {
    const auto digest = signing_digest(m);
    if (const auto* ec = std::get_if<ExitCommit>(&m))
        return keys.verify(ec->node, exit_request_digest(ec->node, ec->height), ec->node_sig) &&
               keys.verify(ec->master, digest, ec->master_sig);
    return keys.verify(signer_of(m), digest, sig_slot(m));
}

bool is_consensus_phase(std::string_view t) {
    return t == "prepare" || t == "commit" || t == "reply" || t == "pre_prepare" || t == "pbft_prepare";
}

bool is_membership(std::string_view t) {
    return t == "erequest" || t == "exit_commit" || t == "change" || t == "urequest" || t == "join_commit";
}

}  // namespace ebrc
