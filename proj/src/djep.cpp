#include "ebrc/djep.hpp"

#include <algorithm>
#include <iostream>

namespace ebrc::djep {

namespace {

bool contains(const std::vector<NodeId>& v, NodeId id) { return std::find(v.begin(), v.end(), id) != v.end(); }

void erase(std::vector<NodeId>& v, NodeId id) { v.erase(std::remove(v.begin(), v.end(), id), v.end()); }

double reputation_of(const reputation::BehaviorTable* table, NodeId id) {
    if (table == nullptr) return 0.0;
    auto it = table->find(id);
    return it == table->end() ? 0.0 : it->second.reputation();
}

bool keeps_floor(std::size_t size_after, std::size_t f) { return size_after >= 3 * f + 1; }

template <class M>
M signed_copy(M m, const KeyRegistry& keys) {
    Message msg = std::move(m);
    sign(msg, keys);
    return std::get<M>(std::move(msg));
}

// Sends `msg` to every consensus node except `self`.
void broadcast(simnet::Actions& out, const CommitteeView& view, NodeId self, const Message& msg) {
    for (auto id : view.consensus_nodes)
        if (id != self) out.push_back(simnet::Send{id, msg});
}

void report(simnet::Actions& out, const MembershipState& state, const Context& ctx, NodeId accused, Evidence ev) {
    Message r = Report{accused, ev, ctx.height, ctx.self, {}};
    sign(r, *ctx.keys);
    broadcast(out, state.committee, ctx.self, r);
}

simnet::Actions finalize_exit(MembershipState& state, NodeId node, std::uint64_t effective_height,
                              const Context& ctx) {
    simnet::Actions out;
    state.pending_exits[node] = {effective_height, true};
    state.exits_awaiting_join.erase(node);
    ExitCommit ec{node, effective_height, ctx.self, {}, {}};
    auto sig = state.exit_signatures.find(node);
    ec.node_sig = sig != state.exit_signatures.end() ? sig->second : Signature{};
    ec.master_sig = KeyRegistry::sign(ctx.keys->keys_of(ctx.self).secret_key, signing_digest(Message{ec}));
    broadcast(out, state.committee, ctx.self, ec);
    // Joining nodes need the new composition too.
    for (const auto& [id, join] : state.pending_joins)
        if (id != ctx.self && !state.committee.is_consensus(id)) out.push_back(simnet::Send{id, Message{ec}});
    state.events.push_back({EventKind::ExitFinalized, node, effective_height});
    return out;
}

}  // namespace

bool CommitteeView::is_consensus(NodeId id) const { return contains(consensus_nodes, id); }
bool CommitteeView::is_candidate(NodeId id) const { return contains(candidates, id); }

std::string to_string(EventKind k) {
    switch (k) {
        case EventKind::ExitRequested: return "exit_requested";
        case EventKind::ExitRejected: return "exit_rejected";
        case EventKind::ExitFinalized: return "exit_finalized";
        case EventKind::PromotionTriggered: return "promotion_triggered";
        case EventKind::JoinVerified: return "join_verified";
        case EventKind::JoinRejected: return "join_rejected";
        case EventKind::JoinActivated: return "join_activated";
        case EventKind::Demoted: return "demoted";
        case EventKind::Stalled: return "stalled";
        case EventKind::Applied: return "applied";
    }
    return "unknown";
}

std::size_t MembershipState::projected_size() const {
    std::size_t size = committee.size();
    for (const auto& [id, j] : pending_joins)
        if (!committee.is_consensus(id)) ++size;
    std::set<NodeId> leaving;
    for (const auto& [id, e] : pending_exits) leaving.insert(id);
    for (const auto& [id, h] : pending_demotions) leaving.insert(id);
    for (auto id : leaving)
        if (committee.is_consensus(id) && size > 0) --size;
    return size;
}

simnet::Actions request_exit(MembershipState& state, const Context& ctx) {
    Message m = ERequest{ctx.self, ctx.height + 1, {}};
    sign(m, *ctx.keys);
    state.events.push_back({EventKind::ExitRequested, ctx.self, ctx.height + 1});
    if (ctx.self == ctx.master) return {};
    return {simnet::Send{ctx.master, std::move(m)}};
}

ExitOutcome process_exit(MembershipState& state, const ERequest& request, const Context& ctx) {
    ExitOutcome result;
    if (!verify(Message{request}, *ctx.keys)) {
        result.rejected = true;
        state.events.push_back({EventKind::ExitRejected, request.node, ctx.height});
        report(result.outbound, state, ctx, request.node, Evidence::BadSignature);
        return result;
    }
    if (!state.committee.is_consensus(request.node) || state.pending_exits.contains(request.node)) {
        std::cerr << "djep: exit request from non-member " << request.node << " ignored\n";
        result.rejected = true;
        state.events.push_back({EventKind::ExitRejected, request.node, ctx.height});
        return result;
    }
    const auto effective = std::max(request.effective_height, ctx.height + 1);
    state.exit_signatures[request.node] = request.sig;
    const auto f = state.committee.f();
    if (keeps_floor(state.projected_size() - 1, f)) {
        result.outbound = finalize_exit(state, request.node, effective, ctx);
        return result;
    }
    try {
        result.outbound = promote_candidate(state, ctx, effective);
    } catch (const MembershipStalled&) {
        result.rejected = true;
        state.exit_signatures.erase(request.node);
        state.events.push_back({EventKind::ExitRejected, request.node, ctx.height});
        state.events.push_back({EventKind::Stalled, request.node, ctx.height});
        return result;
    }
    result.promotion_triggered = true;
    state.pending_exits[request.node] = {effective, false};
    state.exits_awaiting_join[request.node] = effective;
    return result;
}

simnet::Actions promote_candidate(MembershipState& state, const Context& ctx, std::uint64_t effective_height) {
    std::optional<NodeId> best;
    double best_r = -1.0;
    for (auto id : state.committee.candidates) {
        if (state.promoted.contains(id) || state.pending_joins.contains(id)) continue;
        const double r = reputation_of(ctx.table, id);
        if (!best || r > best_r) {
            best = id;
            best_r = r;
        }
    }
    if (!best) throw MembershipStalled(ctx.height);
    state.promoted.insert(*best);
    state.events.push_back({EventKind::PromotionTriggered, *best, effective_height});
    return {simnet::Send{*best, signed_copy(Change{*best, effective_height, ctx.self, {}}, *ctx.keys)}};
}

simnet::Actions replace_faulty(MembershipState& state, NodeId accused, const Context& ctx,
                               std::uint64_t effective_height) {
    if (!state.committee.is_consensus(accused)) {
        std::cerr << "djep: replace_faulty on non-member " << accused << " ignored\n";
        return {};
    }
    if (state.pending_demotions.contains(accused)) return {};
    state.pending_demotions[accused] = effective_height;
    if (ctx.self != ctx.master || ctx.self == accused) return {};
    try {
        return promote_candidate(state, ctx, effective_height);
    } catch (const MembershipStalled&) {
        state.events.push_back({EventKind::Stalled, accused, ctx.height});
        return {};
    }
}

simnet::Actions on_exit_commit(MembershipState& state, const ExitCommit& msg, const Context& ctx) {
    if (!verify(Message{msg}, *ctx.keys) || !state.committee.is_consensus(msg.master) ||
        !state.committee.is_consensus(msg.node))
        return {};
    if (msg.height < ctx.height + 1) return {};
    state.pending_exits[msg.node] = {msg.height, true};
    state.events.push_back({EventKind::ExitFinalized, msg.node, msg.height});
    return {};
}

simnet::Actions on_change(MembershipState& state, const Change& msg, const Context& ctx) {
    if (msg.node != ctx.self || !verify(Message{msg}, *ctx.keys) || !state.committee.is_consensus(msg.master) ||
        !state.committee.is_candidate(ctx.self))
        return {};
    const double r = reputation_of(ctx.table, ctx.self);
    state.pending_joins[ctx.self] = {msg.height, r};
    const auto u = signed_copy(Urequest{ctx.self, r, msg.height, {}}, *ctx.keys);
    simnet::Actions out;
    for (auto id : state.committee.consensus_nodes) out.push_back(simnet::Send{id, u});
    return out;
}

simnet::Actions on_urequest(MembershipState& state, const Urequest& msg, const Context& ctx) {
    simnet::Actions out;
    if (!state.committee.is_consensus(ctx.self) || !state.committee.is_candidate(msg.node)) return out;
    if (!verify(Message{msg}, *ctx.keys)) {
        report(out, state, ctx, msg.node, Evidence::BadSignature);
        return out;
    }
    if (ctx.table == nullptr || !ctx.table->contains(msg.node) ||
        ctx.table->at(msg.node).reputation() != msg.reputation) {
        state.events.push_back({EventKind::JoinRejected, msg.node, msg.height});
        report(out, state, ctx, msg.node, Evidence::ReputationMismatch);
        return out;
    }
    state.pending_joins[msg.node] = {msg.height, msg.reputation};
    state.events.push_back({EventKind::JoinVerified, msg.node, msg.height});
    out.push_back(simnet::Send{msg.node, signed_copy(JoinCommit{msg.node, msg.height, ctx.self, {}}, *ctx.keys)});

    // FIFO by arrival is the map's node order here; exits awaiting a join
    // are rare enough that only one is normally pending.
    const auto awaiting = state.exits_awaiting_join;
    for (const auto& [node, eff] : awaiting) {
        auto more = finalize_exit(state, node, std::max(eff, msg.height), ctx);
        out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    }
    return out;
}

simnet::Actions on_join_commit(MembershipState& state, const JoinCommit& msg, const Context& ctx) {
    if (msg.node != ctx.self || !verify(Message{msg}, *ctx.keys) || !state.committee.is_consensus(msg.sender))
        return {};
    auto& confirmed = state.join_confirmations[msg.height];
    confirmed.insert(msg.sender);
    if (!state.activation_height && confirmed.size() >= quorum_size(state.committee.f())) {
        state.activation_height = msg.height;
        state.events.push_back({EventKind::JoinActivated, ctx.self, msg.height});
    }
    return {};
}

std::vector<MembershipEvent> apply_effective(MembershipState& state, std::uint64_t height,
                                             const reputation::BehaviorTable* table) {
    std::vector<MembershipEvent> applied;
    auto& view = state.committee;

    for (auto it = state.pending_joins.begin(); it != state.pending_joins.end();) {
        const auto [id, join] = *it;
        if (join.effective_height > height) {
            ++it;
            continue;
        }
        if (!view.is_consensus(id)) {
            erase(view.candidates, id);
            erase(view.spares, id);
            // Insert after every member with at least the same reputation so
            // existing order is kept.
            const double r = reputation_of(table, id);
            auto pos = std::find_if(view.consensus_nodes.begin(), view.consensus_nodes.end(),
                                    [&](NodeId other) { return reputation_of(table, other) < r; });
            view.consensus_nodes.insert(pos, id);
            applied.push_back({EventKind::Applied, id, height});
        }
        state.promoted.erase(id);
        it = state.pending_joins.erase(it);
    }

    for (auto it = state.pending_exits.begin(); it != state.pending_exits.end();) {
        const auto [id, exit] = *it;
        if (!exit.finalized || exit.effective_height > height) {
            ++it;
            continue;
        }
        if (view.is_consensus(id)) {
            erase(view.consensus_nodes, id);
            view.spares.push_back(id);
            applied.push_back({EventKind::ExitFinalized, id, height});
        }
        state.exit_signatures.erase(id);
        it = state.pending_exits.erase(it);
    }

    for (auto it = state.pending_demotions.begin(); it != state.pending_demotions.end();) {
        const auto [id, eff] = *it;
        if (eff > height) {
            ++it;
            continue;
        }
        if (!view.is_consensus(id)) {
            it = state.pending_demotions.erase(it);
            continue;
        }
        if (!keeps_floor(view.size() - 1, view.f())) {
            if (state.stalled.insert(id).second) applied.push_back({EventKind::Stalled, id, height});
            ++it;
            continue;
        }
        erase(view.consensus_nodes, id);
        view.spares.push_back(id);
        state.stalled.erase(id);
        applied.push_back({EventKind::Demoted, id, height});
        it = state.pending_demotions.erase(it);
    }

    state.events.insert(state.events.end(), applied.begin(), applied.end());
    return applied;
}

}  // namespace ebrc::djep
