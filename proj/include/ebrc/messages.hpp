#pragma once

#include <cstdint>
#include <string_view>
#include <variant>
#include <vector>

#include "ebrc/crypto.hpp"

namespace ebrc {

struct Transaction {
    NodeId client = 0;
    std::uint64_t seq = 0;
    SimTime timestamp = 0;
    std::uint32_t payload_size = 0;
    std::uint64_t payload_seed = 0;

    Hash256 digest() const;
    auto operator<=>(const Transaction&) const = default;
};

// Digest m(d) of an ordered transaction batch.
Hash256 batch_digest(const std::vector<Transaction>& txs);

struct Block {
    std::uint64_t height = 0;
    std::uint64_t view = 0;
    std::vector<Transaction> txs;
    Hash256 tx_digest;
    Hash256 previous_hash;
    Hash256 digest;
    std::vector<NodeId> committers;

    // Block identity covers height, parent and payload but not the view, so
    // the same batch re-proposed after a view change is the same block.
    static Hash256 compute_digest(std::uint64_t height, const Hash256& previous, const Hash256& tx_digest);
};

enum class Verdict : std::uint8_t { Valid, Invalid };

enum class Evidence : std::uint8_t {
    BadSignature,
    BadProposal,
    BadVrfProof,
    ReputationMismatch,
    Silent,
    Ousted,  // removed by a completed view change
};

std::string_view to_string(Evidence e);

struct Request {
    SimTime timestamp = 0;
    Transaction tx;
    Hash256 tx_digest;
    NodeId client = 0;
    Signature sig;
    NodeId sender = 0;  // relaying node when forwarded, client otherwise
};

struct Prepare {
    std::uint64_t height = 0;
    std::uint64_t view = 0;
    SimTime timestamp = 0;
    std::vector<Transaction> txs;
    Hash256 digest;
    NodeId sender = 0;
    Signature sig;
};

struct Commit {
    std::uint64_t view = 0;
    SimTime timestamp = 0;
    Hash256 digest;
    std::uint64_t sn = 0;  // equals the block height
    Verdict verdict = Verdict::Valid;
    NodeId sender = 0;
    Signature sig;
};

struct Reply {
    NodeId client = 0;
    SimTime timestamp = 0;
    Hash256 digest;
    std::uint64_t height = 0;
    std::uint32_t committee_size = 0;
    Verdict verdict = Verdict::Valid;
    NodeId sender = 0;
    Signature sig;
};

struct ViewChange {
    std::uint64_t height = 0;
    std::uint64_t proposed_view = 0;
    NodeId sender = 0;
    Signature sig;
};

struct Report {
    NodeId accused = 0;
    Evidence evidence = Evidence::BadProposal;
    std::uint64_t height = 0;
    NodeId sender = 0;
    Signature sig;
};

// Classic PBFT proposal and prepare vote; PBFT commits reuse Commit.
struct PrePrepare {
    std::uint64_t height = 0;
    std::uint64_t view = 0;
    SimTime timestamp = 0;
    std::vector<Transaction> txs;
    Hash256 digest;
    NodeId sender = 0;
    Signature sig;
};

struct PrepareVote {
    std::uint64_t height = 0;
    std::uint64_t view = 0;
    Hash256 digest;
    NodeId sender = 0;
    Signature sig;
};

// Catch-up for a replica that fell behind: the committed block plus the
// quorum of commits that finalized it.
struct BlockSync {
    Block block;
    std::vector<Commit> certificate;
    NodeId sender = 0;
    Signature sig;
};

struct ERequest {
    NodeId node = 0;
    std::uint64_t effective_height = 0;
    Signature sig;
};

struct ExitCommit {
    NodeId node = 0;
    std::uint64_t height = 0;
    NodeId master = 0;
    Signature node_sig;
    Signature master_sig;
};

struct Change {
    NodeId node = 0;
    std::uint64_t height = 0;
    NodeId master = 0;
    Signature sig;
};

struct Urequest {
    NodeId node = 0;
    double reputation = 0.0;
    std::uint64_t height = 0;
    Signature sig;
};

struct JoinCommit {
    NodeId node = 0;
    std::uint64_t height = 0;
    NodeId sender = 0;
    Signature sig;
};

struct VrfConnect {
    NodeId node = 0;
    std::uint64_t epoch = 0;
    Hash256 seed;
    std::vector<std::uint8_t> proof;
    Signature sig;
};

using Message = std::variant<Request, Prepare, Commit, Reply, ViewChange, Report, PrePrepare, PrepareVote, BlockSync,
                             ERequest, ExitCommit, Change, Urequest, JoinCommit, VrfConnect>;

std::string_view tag(const Message& m);
NodeId sender_of(const Message& m);

// Digest over every field except the signature(s).
Hash256 signing_digest(const Message& m);

// Digest carried by the message, zero when it has none; used in traces.
Hash256 carried_digest(const Message& m);

// Signs in place with the sender's key.
void sign(Message& m, const KeyRegistry& keys);

// ExitCommit carries the exiting node's ERequest signature next to the
// master's signature over the commit itself.
Hash256 exit_request_digest(NodeId node, std::uint64_t height);
void sign_exit_commit(ExitCommit& m, const KeyRegistry& keys);
bool verify(const Message& m, const KeyRegistry& keys);

bool is_consensus_phase(std::string_view tag);
bool is_membership(std::string_view tag);

}  // namespace ebrc
