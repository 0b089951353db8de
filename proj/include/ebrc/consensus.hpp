#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "ebrc/djep.hpp"
#include "ebrc/messages.hpp"
#include "ebrc/quorum.hpp"
#include "ebrc/reputation.hpp"
#include "ebrc/simnet.hpp"

namespace ebrc::consensus {

enum class Protocol { Ebrc, Pbft };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

enum class Role { Master, Slave, Candidate, Spare };
enum class Phase { Idle, Prepared, Committed };

std::string to_string(Role r);
std::string to_string(Phase p);

// Two digests reached a quorum at the same height: more than f faults.
class QuorumViolation : public ProtocolError {
  public:
    QuorumViolation() : ProtocolError("two digests reached quorum at one height") {}
};

using Tally = std::map<Hash256, std::set<NodeId>>;

// The digest backed by at least 2f+1 distinct senders, if any.
std::optional<Hash256> check_quorum(const Tally& tally, std::size_t f);

struct ReplicaConfig {
    Protocol protocol = Protocol::Ebrc;
    std::size_t block_tx_cap = 15;
    SimTime batch_wait = millis(50);
    SimTime view_change_timeout = millis(200);
    // Vote the view forward at once when the master was already ousted
    // earlier in the run.
    bool quick_skip = true;
    NodeId client = kClientIdBase;
};

// Misbehaviour this replica witnessed itself.
struct Observation {
    NodeId accused = 0;
    Evidence evidence = Evidence::Silent;
    std::uint64_t height = 0;
    NodeId reporter = 0;

    auto operator<=>(const Observation&) const = default;
};

using TxKey = std::tuple<SimTime, NodeId, std::uint64_t>;

inline TxKey key_of(const Transaction& tx) { return {tx.timestamp, tx.client, tx.seq}; }

inline constexpr std::uint32_t kBatchTimer = 1;
inline constexpr std::uint32_t kViewTimer = 2;

struct ReplicaState {
    NodeId id = 0;
    Phase phase = Phase::Idle;
    std::uint64_t view = 0;
    std::uint64_t height = 1;       // next height to agree; equals ledger size
    std::uint64_t open_height = 0;  // highest height the round driver has opened
    std::uint64_t voted_view = 0;   // highest view this replica asked for at `height`

    std::map<TxKey, Transaction> pending;
    std::optional<SimTime> pending_since;
    std::set<TxKey> committed;

    std::map<std::uint64_t, std::map<Hash256, std::vector<Transaction>>> proposals;
    std::map<std::uint64_t, std::map<Hash256, std::map<NodeId, Commit>>> commit_votes;
    std::map<std::uint64_t, Tally> prepare_votes;
    std::map<std::uint64_t, std::set<Hash256>> voted_commit;
    std::map<std::uint64_t, std::set<Hash256>> voted_prepare;
    std::map<std::uint64_t, std::set<NodeId>> participants;
    std::map<std::uint64_t, std::map<std::uint64_t, std::set<NodeId>>> view_votes;
    std::optional<std::pair<std::uint64_t, std::uint64_t>> proposed;  // (height, view)
    std::vector<Message> buffered;

    std::vector<Block> ledger;
    std::map<std::uint64_t, std::vector<Commit>> certificates;
    std::map<std::uint64_t, std::uint32_t> view_changes;  // adoptions per height
    std::set<NodeId> convicted;
    std::vector<Observation> observations;
    std::vector<Report> reports_received;

    djep::MembershipState membership;

    std::uint64_t batch_token = 0;
    bool batch_armed = false;
    std::uint64_t view_token = 0;
    bool view_armed = false;
};

Block genesis_block();

class Replica final : public simnet::Endpoint {
  public:
    Replica(NodeId id, ReplicaConfig config, const KeyRegistry& keys, const reputation::BehaviorTable* table);

    simnet::Actions on_message(SimTime now, const Message& msg) override;
    simnet::Actions on_timer(SimTime now, std::uint32_t kind, std::uint64_t token) override;
    bool timer_live(std::uint32_t kind, std::uint64_t token) const override;

    // New epoch: fresh membership, pending work and tallies are kept.
    void install_committee(const djep::CommitteeView& view);
    // Overwrites the membership view without touching pending changes.
    void sync_committee(const djep::CommitteeView& view);

    // Opens `height` for agreement and applies membership changes due by then.
    simnet::Actions begin_round(SimTime now, std::uint64_t height);
    // Records committee members that stayed silent through `height`.
    void end_round(std::uint64_t height);

    simnet::Actions request_exit(SimTime now);
    simnet::Actions replace_faulty(SimTime now, NodeId accused, std::uint64_t effective_height);

    // Appends a committed block proven by `certificate`. Empty when the
    // block does not extend the ledger or the proof does not check out.
    std::optional<simnet::Actions> deliver_block(SimTime now, const Block& block,
                                                 const std::vector<Commit>& certificate);

    NodeId id() const { return state_.id; }
    const ReplicaState& state() const { return state_; }
    const std::vector<Block>& ledger() const { return state_.ledger; }
    const djep::CommitteeView& committee() const { return state_.membership.committee; }
    const djep::MembershipState& membership() const { return state_.membership; }
    std::optional<NodeId> current_master() const;
    bool is_consensus() const { return committee().is_consensus(state_.id); }
    Role role() const;
    std::size_t f() const { return committee().f(); }

  private:
    simnet::Actions handle(const Message& msg);
    void on_request(const Request& r, simnet::Actions& out);
    void on_prepare(const Prepare& p, simnet::Actions& out);
    void on_pre_prepare(const PrePrepare& p, simnet::Actions& out);
    void on_prepare_vote(const PrepareVote& v, simnet::Actions& out);
    void on_commit(const Commit& c, simnet::Actions& out);
    void on_view_change(const ViewChange& vc, simnet::Actions& out);
    void on_block_sync(const BlockSync& bs, simnet::Actions& out);

    std::vector<Transaction> canonical_batch() const;
    bool valid_batch(const std::vector<Transaction>& txs, const Hash256& digest) const;
    void accept_proposal(std::uint64_t height, std::uint64_t view, NodeId sender, const std::vector<Transaction>& txs,
                         const Hash256& digest, simnet::Actions& out);
    void maybe_propose(simnet::Actions& out);
    void propose(simnet::Actions& out);
    void send_commit(const Hash256& digest, simnet::Actions& out);
    void check_prepared(simnet::Actions& out);
    void check_commit(simnet::Actions& out);
    void commit_block(const Hash256& digest, const std::vector<Transaction>& txs, simnet::Actions& out,
                      bool reply);
    bool verify_certificate(const Block& block, const std::vector<Commit>& certificate) const;
    void append_block(Block block, std::vector<Commit> certificate);
    void start_height(simnet::Actions& out);
    // Votes past a master this replica already saw ousted.
    bool maybe_skip(simnet::Actions& out);
    void start_view_change(std::uint64_t target, simnet::Actions& out);
    void check_view_votes(simnet::Actions& out);
    void adopt_view(std::uint64_t view, simnet::Actions& out);
    void arm_view_timer(simnet::Actions& out);
    void replay_buffered(simnet::Actions& out);
    void observe(NodeId accused, Evidence evidence);
    void report(NodeId accused, Evidence evidence, simnet::Actions& out);
    void broadcast(const Message& msg, simnet::Actions& out) const;
    djep::Context djep_context() const;
    bool working() const;

    template <class M>
    Message signed_msg(M m) const;

    ReplicaConfig config_;
    const KeyRegistry* keys_;
    const reputation::BehaviorTable* table_;
    SimTime now_ = 0;
    SimTime opened_at_ = 0;
    ReplicaState state_;
};

struct Acceptance {
    Hash256 digest;
    SimTime time = 0;
    std::size_t replies = 0;
};

// Accepts a height once f+1 committee members reply with the same digest.
class Client final : public simnet::Endpoint {
  public:
    Client(NodeId id, const KeyRegistry& keys) : id_(id), keys_(&keys) {}

    void set_committee(const std::vector<NodeId>& members);
    simnet::Actions submit(const std::vector<Request>& requests) const;

    simnet::Actions on_message(SimTime now, const Message& msg) override;
    simnet::Actions on_timer(SimTime, std::uint32_t, std::uint64_t) override { return {}; }

    NodeId id() const { return id_; }
    bool accepted(std::uint64_t height) const { return accepted_.contains(height); }
    const std::map<std::uint64_t, Acceptance>& acceptances() const { return accepted_; }
    // Heights where f+1 replies backed two different digests.
    const std::set<std::uint64_t>& conflicts() const { return conflicts_; }

  private:
    NodeId id_;
    const KeyRegistry* keys_;
    std::vector<NodeId> members_;
    std::map<std::uint64_t, Tally> replies_;
    std::map<std::uint64_t, Acceptance> accepted_;
    std::set<std::uint64_t> conflicts_;
};

}  // namespace ebrc::consensus
