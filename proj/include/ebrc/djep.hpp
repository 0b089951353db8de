#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "ebrc/quorum.hpp"
#include "ebrc/reputation.hpp"
#include "ebrc/simnet.hpp"

// Dynamic joining and exiting: graceful exit of consensus nodes and
// promotion of candidates while consensus keeps running.
namespace ebrc::djep {

struct CommitteeView {
    std::vector<NodeId> consensus_nodes;  // reputation order
    std::vector<NodeId> candidates;       // reputation order
    std::vector<NodeId> spares;

    std::size_t size() const { return consensus_nodes.size(); }
    std::size_t f() const { return max_faults(size()); }
    bool is_consensus(NodeId id) const;
    bool is_candidate(NodeId id) const;

    bool operator==(const CommitteeView&) const = default;
};

enum class EventKind {
    ExitRequested,
    ExitRejected,
    ExitFinalized,
    PromotionTriggered,
    JoinVerified,
    JoinRejected,
    JoinActivated,
    Demoted,
    Stalled,
    Applied,
};

std::string to_string(EventKind k);

struct MembershipEvent {
    EventKind kind = EventKind::Applied;
    NodeId node = 0;
    std::uint64_t height = 0;

    bool operator==(const MembershipEvent&) const = default;
};

struct PendingExit {
    std::uint64_t effective_height = 0;
    bool finalized = false;
};

struct PendingJoin {
    std::uint64_t effective_height = 0;
    double reputation = 0.0;
};

struct MembershipState {
    CommitteeView committee;
    std::map<NodeId, PendingExit> pending_exits;
    std::map<NodeId, PendingJoin> pending_joins;
    std::map<NodeId, std::uint64_t> pending_demotions;
    // Master side: exits that wait for a promotion to keep the floor.
    std::map<NodeId, std::uint64_t> exits_awaiting_join;
    // ERequest signatures, reused as the exiting node's half of ExitCommit.
    std::map<NodeId, Signature> exit_signatures;
    // Candidate side: distinct consensus nodes that confirmed our join.
    std::map<std::uint64_t, std::set<NodeId>> join_confirmations;
    // Master side: candidates already sent a Change.
    std::set<NodeId> promoted;
    // Demotions already reported as stalled.
    std::set<NodeId> stalled;
    std::optional<std::uint64_t> activation_height;
    std::vector<MembershipEvent> events;

    // Consensus set size once every pending change is applied.
    std::size_t projected_size() const;
};

class MembershipStalled : public ProtocolError {
  public:
    explicit MembershipStalled(std::uint64_t height)
        : ProtocolError("no candidate available for promotion at height " + std::to_string(height)), height(height) {}
    std::uint64_t height;
};

struct Context {
    NodeId self = 0;
    NodeId master = 0;
    // Height of the block currently being agreed (or about to be).
    std::uint64_t height = 0;
    const KeyRegistry* keys = nullptr;
    const reputation::BehaviorTable* table = nullptr;
};

// Exiting node side: ERequest to the master, effective at height + 1.
simnet::Actions request_exit(MembershipState& state, const Context& ctx);

struct ExitOutcome {
    simnet::Actions outbound;
    bool promotion_triggered = false;
    bool rejected = false;
};

// Master side handling of an exit request.
ExitOutcome process_exit(MembershipState& state, const ERequest& request, const Context& ctx);

// Master side: Change to the highest-reputation candidate. Throws
// MembershipStalled when there are no candidates left.
simnet::Actions promote_candidate(MembershipState& state, const Context& ctx, std::uint64_t effective_height);

// Demotes a convicted consensus node at `effective_height` and, on the
// master, starts a promotion. Non-members are a no-op.
simnet::Actions replace_faulty(MembershipState& state, NodeId accused, const Context& ctx,
                               std::uint64_t effective_height);

simnet::Actions on_exit_commit(MembershipState& state, const ExitCommit& msg, const Context& ctx);
simnet::Actions on_change(MembershipState& state, const Change& msg, const Context& ctx);
simnet::Actions on_urequest(MembershipState& state, const Urequest& msg, const Context& ctx);
simnet::Actions on_join_commit(MembershipState& state, const JoinCommit& msg, const Context& ctx);

// Applies every change due at or before `height`. Demotions that would
// break the 3f+1 floor are held back and reported as Stalled.
std::vector<MembershipEvent> apply_effective(MembershipState& state, std::uint64_t height,
                                             const reputation::BehaviorTable* table);

}  // namespace ebrc::djep
