#include "ebrc/consensus.hpp"

#include <algorithm>
#include <stdexcept>

namespace ebrc::consensus {

namespace {

constexpr std::size_t kMaxBuffered = 4096;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void append(simnet::Actions& out, simnet::Actions more) {
    out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

}  // namespace

std::string to_string(Protocol p) { return p == Protocol::Ebrc ? "ebrc" : "pbft"; }

Protocol protocol_from_string(const std::string& s) {
    if (s == "ebrc") return Protocol::Ebrc;
    if (s == "pbft") return Protocol::Pbft;
    throw std::invalid_argument("unknown protocol '" + s + "'");
}

std::string to_string(Role r) {
    switch (r) {
        case Role::Master: return "master";
        case Role::Slave: return "slave";
        case Role::Candidate: return "candidate";
        case Role::Spare: return "spare";
    }
    return "spare";
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::Idle: return "idle";
        case Phase::Prepared: return "prepared";
        case Phase::Committed: return "committed";
    }
    return "idle";
}

std::optional<Hash256> check_quorum(const Tally& tally, std::size_t f) {
    std::optional<Hash256> found;
    for (const auto& [digest, senders] : tally) {
        if (senders.size() < quorum_size(f)) continue;
        if (found) throw QuorumViolation();
        found = digest;
    }
    return found;
}

Block genesis_block() {
    Block b;
    b.tx_digest = batch_digest({});
    b.digest = Block::compute_digest(0, Hash256{}, b.tx_digest);
    return b;
}

Replica::Replica(NodeId id, ReplicaConfig config, const KeyRegistry& keys, const reputation::BehaviorTable* table)
    : config_(config), keys_(&keys), table_(table) {
    state_.id = id;
    state_.ledger.push_back(genesis_block());
    state_.height = 1;
}

template <class M>
Message Replica::signed_msg(M m) const {
    Message msg = std::move(m);
    sign(msg, *keys_);
    return msg;
}

std::optional<NodeId> Replica::current_master() const {
    const auto& nodes = committee().consensus_nodes;
    if (nodes.empty()) return std::nullopt;
    std::size_t idx = 0;
    if (config_.protocol == Protocol::Ebrc)
        idx = select_master(state_.height, state_.view, f()) % nodes.size();
    else
        idx = static_cast<std::size_t>(state_.view % nodes.size());
    return nodes[idx];
}

Role Replica::role() const {
    if (current_master() == state_.id) return Role::Master;
    if (is_consensus()) return Role::Slave;
    if (committee().is_candidate(state_.id)) return Role::Candidate;
    return Role::Spare;
}

bool Replica::working() const { return is_consensus() && state_.height <= state_.open_height; }

djep::Context Replica::djep_context() const {
    return {state_.id, current_master().value_or(state_.id), state_.height, keys_, table_};
}

void Replica::install_committee(const djep::CommitteeView& view) {
    state_.membership = djep::MembershipState{};
    state_.membership.committee = view;
}

void Replica::sync_committee(const djep::CommitteeView& view) { state_.membership.committee = view; }

void Replica::broadcast(const Message& msg, simnet::Actions& out) const {
    for (auto id : committee().consensus_nodes)
        if (id != state_.id) out.push_back(simnet::Send{id, msg});
}

void Replica::observe(NodeId accused, Evidence evidence) {
    state_.observations.push_back({accused, evidence, state_.height, state_.id});
}

void Replica::report(NodeId accused, Evidence evidence, simnet::Actions& out) {
    observe(accused, evidence);
    if (config_.protocol != Protocol::Ebrc) return;
    broadcast(signed_msg(Report{accused, evidence, state_.height, state_.id, {}}), out);
}

simnet::Actions Replica::on_message(SimTime now, const Message& msg) {
    now_ = now;
    return handle(msg);
}

simnet::Actions Replica::handle(const Message& msg) {
    simnet::Actions out;
    if (!verify(msg, *keys_)) {
        const auto t = tag(msg);
        if (is_consensus() && t != "request" && committee().is_consensus(sender_of(msg)))
            report(sender_of(msg), Evidence::BadSignature, out);
        return out;
    }
    const bool ebrc = config_.protocol == Protocol::Ebrc;
    std::visit(overloaded{
                   [&](const Request& r) { on_request(r, out); },
                   [&](const Prepare& p) {
                       if (ebrc) on_prepare(p, out);
                   },
                   [&](const PrePrepare& p) {
                       if (!ebrc) on_pre_prepare(p, out);
                   },
                   [&](const PrepareVote& v) {
                       if (!ebrc) on_prepare_vote(v, out);
                   },
                   [&](const Commit& c) { on_commit(c, out); },
                   [&](const ViewChange& vc) { on_view_change(vc, out); },
                   [&](const BlockSync& bs) { on_block_sync(bs, out); },
                   [&](const Report& r) {
                       state_.reports_received.push_back(r);
                       if (committee().is_consensus(r.sender)) state_.participants[r.height].insert(r.sender);
                   },
                   [&](const ERequest& r) {
                       if (ebrc && is_consensus())
                           append(out, djep::process_exit(state_.membership, r, djep_context()).outbound);
                   },
                   [&](const ExitCommit& r) {
                       if (ebrc) append(out, djep::on_exit_commit(state_.membership, r, djep_context()));
                   },
                   [&](const Change& r) {
                       if (ebrc) append(out, djep::on_change(state_.membership, r, djep_context()));
                   },
                   [&](const Urequest& r) {
                       if (ebrc) append(out, djep::on_urequest(state_.membership, r, djep_context()));
                   },
                   [&](const JoinCommit& r) {
                       if (ebrc) append(out, djep::on_join_commit(state_.membership, r, djep_context()));
                   },
                   [&](const auto&) {},
               },
               msg);
    return out;
}

// --- requests and proposals ---------------------------------------------------

void Replica::on_request(const Request& r, simnet::Actions& out) {
    if (r.tx_digest != r.tx.digest() || r.tx.client != r.client) return;
    const auto key = key_of(r.tx);
    if (state_.committed.contains(key) || state_.pending.contains(key)) return;
    if (!is_consensus()) {
        // Not on the committee: hand client traffic to the master.
        auto master = current_master();
        if (r.sender == r.client && master) {
            Request fwd = r;
            fwd.sender = state_.id;
            out.push_back(simnet::Send{*master, fwd});
        }
        return;
    }
    state_.pending.emplace(key, r.tx);
    if (!state_.pending_since) state_.pending_since = now_;
    if (!working() || maybe_skip(out)) return;
    maybe_propose(out);
    if (!state_.view_armed) arm_view_timer(out);
}

std::vector<Transaction> Replica::canonical_batch() const {
    std::vector<Transaction> txs;
    for (const auto& [key, tx] : state_.pending) {
        if (txs.size() >= config_.block_tx_cap) break;
        txs.push_back(tx);
    }
    return txs;
}

bool Replica::valid_batch(const std::vector<Transaction>& txs, const Hash256& digest) const {
    return !txs.empty() && batch_digest(txs) == digest && txs == canonical_batch();
}

void Replica::maybe_propose(simnet::Actions& out) {
    if (!working() || current_master() != state_.id || state_.pending.empty()) return;
    if (state_.proposed == std::make_pair(state_.height, state_.view)) return;
    const SimTime since = std::max(state_.pending_since.value_or(now_), opened_at_);
    const SimTime due = since + config_.batch_wait;
    if (now_ >= due) {
        propose(out);
        return;
    }
    if (state_.batch_armed) return;
    state_.batch_armed = true;
    out.push_back(simnet::SetTimer{due - now_, kBatchTimer, ++state_.batch_token});
}

void Replica::propose(simnet::Actions& out) {
    auto txs = canonical_batch();
    const auto digest = batch_digest(txs);
    state_.proposed = std::make_pair(state_.height, state_.view);
    state_.proposals[state_.height][digest] = txs;
    state_.participants[state_.height].insert(state_.id);
    if (config_.protocol == Protocol::Ebrc) {
        broadcast(signed_msg(Prepare{state_.height, state_.view, now_, txs, digest, state_.id, {}}), out);
        send_commit(digest, out);
        state_.phase = Phase::Prepared;
        check_commit(out);
    } else {
        broadcast(signed_msg(PrePrepare{state_.height, state_.view, now_, txs, digest, state_.id, {}}), out);
        check_prepared(out);
        check_commit(out);
    }
}

void Replica::accept_proposal(std::uint64_t height, std::uint64_t view, NodeId sender,
                              const std::vector<Transaction>& txs, const Hash256& digest, simnet::Actions& out) {
    if (!is_consensus() || height < state_.height || (height == state_.height && view < state_.view)) return;
    if (height > state_.height || view > state_.view) {
        if (state_.buffered.size() < kMaxBuffered) {
            if (config_.protocol == Protocol::Ebrc)
                state_.buffered.push_back(Prepare{height, view, 0, txs, digest, sender, {}});
            else
                state_.buffered.push_back(PrePrepare{height, view, 0, txs, digest, sender, {}});
        }
        return;
    }
    if (current_master() != sender) return;
    state_.participants[height].insert(sender);
    if (!valid_batch(txs, digest)) {
        report(sender, Evidence::BadProposal, out);
        start_view_change(state_.view + 1, out);
        return;
    }
    state_.proposals[height][digest] = txs;
    if (config_.protocol == Protocol::Ebrc) {
        send_commit(digest, out);
        state_.phase = Phase::Prepared;
        check_commit(out);
        return;
    }
    if (state_.voted_prepare[height].insert(digest).second) {
        broadcast(signed_msg(PrepareVote{height, view, digest, state_.id, {}}), out);
        state_.prepare_votes[height][digest].insert(state_.id);
    }
    check_prepared(out);
    check_commit(out);
}

void Replica::on_prepare(const Prepare& p, simnet::Actions& out) {
    accept_proposal(p.height, p.view, p.sender, p.txs, p.digest, out);
}

void Replica::on_pre_prepare(const PrePrepare& p, simnet::Actions& out) {
    accept_proposal(p.height, p.view, p.sender, p.txs, p.digest, out);
}

void Replica::on_prepare_vote(const PrepareVote& v, simnet::Actions& out) {
    if (!is_consensus() || !committee().is_consensus(v.sender)) return;
    state_.participants[v.height].insert(v.sender);
    if (v.height < state_.height) return;
    state_.prepare_votes[v.height][v.digest].insert(v.sender);
    if (v.height == state_.height) check_prepared(out);
}

void Replica::check_prepared(simnet::Actions& out) {
    const auto h = state_.height;
    auto props = state_.proposals.find(h);
    if (props == state_.proposals.end()) return;
    for (const auto& [digest, txs] : props->second) {
        const auto& votes = state_.prepare_votes[h][digest];
        if (votes.size() >= 2 * f()) {
            state_.phase = Phase::Prepared;
            send_commit(digest, out);
        }
    }
}

void Replica::send_commit(const Hash256& digest, simnet::Actions& out) {
    const auto h = state_.height;
    if (!state_.voted_commit[h].insert(digest).second) return;
    Commit c{state_.view, now_, digest, h, Verdict::Valid, state_.id, {}};
    auto msg = signed_msg(c);
    broadcast(msg, out);
    state_.commit_votes[h][digest][state_.id] = std::get<Commit>(msg);
    state_.participants[h].insert(state_.id);
}

void Replica::on_commit(const Commit& c, simnet::Actions& out) {
    if (!is_consensus() || !committee().is_consensus(c.sender)) return;
    state_.participants[c.sn].insert(c.sender);
    if (c.sn < state_.height || c.verdict != Verdict::Valid) return;
    state_.commit_votes[c.sn][c.digest].emplace(c.sender, c);
    if (c.sn == state_.height) check_commit(out);
}

void Replica::check_commit(simnet::Actions& out) {
    const auto h = state_.height;
    auto votes = state_.commit_votes.find(h);
    if (votes == state_.commit_votes.end()) return;
    Tally tally;
    for (const auto& [digest, by_sender] : votes->second)
        for (const auto& [sender, c] : by_sender) tally[digest].insert(sender);
    const auto digest = check_quorum(tally, f());
    if (!digest) return;
    std::vector<Transaction> txs;
    auto props = state_.proposals.find(h);
    if (props != state_.proposals.end() && props->second.contains(*digest)) {
        txs = props->second.at(*digest);
    } else {
        // The proposal never reached us, but an honest proposal is always
        // our own canonical batch.
        txs = canonical_batch();
        if (txs.empty() || batch_digest(txs) != *digest) return;
    }
    commit_block(*digest, txs, out, true);
}

// --- ledger -------------------------------------------------------------------

void Replica::commit_block(const Hash256& digest, const std::vector<Transaction>& txs, simnet::Actions& out,
                           bool reply) {
    const auto h = state_.height;
    std::vector<Commit> cert;
    for (const auto& [sender, c] : state_.commit_votes[h][digest]) cert.push_back(c);
    Block b;
    b.height = h;
    b.view = state_.view;
    b.txs = txs;
    b.tx_digest = digest;
    b.previous_hash = state_.ledger.back().digest;
    b.digest = Block::compute_digest(h, b.previous_hash, digest);
    for (const auto& c : cert) b.committers.push_back(c.sender);
    state_.phase = Phase::Committed;
    append_block(b, std::move(cert));
    if (reply) {
        out.push_back(simnet::Send{
            config_.client,
            signed_msg(Reply{config_.client, now_, digest, h, static_cast<std::uint32_t>(committee().size()),
                             Verdict::Valid, state_.id, {}})});
    }
    start_height(out);
}

void Replica::append_block(Block block, std::vector<Commit> certificate) {
    const auto h = block.height;
    for (const auto& tx : block.txs) {
        const auto key = key_of(tx);
        state_.pending.erase(key);
        state_.committed.insert(key);
    }
    state_.pending_since = state_.pending.empty() ? std::nullopt : std::optional<SimTime>{now_};
    // Views are numbered per height in EBRC so every replica starts the next
    // height in agreement. PBFT keeps its view but catches up to one that
    // f+1 certificate signers were already in.
    std::uint64_t view = 0;
    if (config_.protocol == Protocol::Pbft) {
        std::vector<std::uint64_t> views;
        for (const auto& c : certificate) views.push_back(c.view);
        std::sort(views.rbegin(), views.rend());
        view = state_.view;
        if (views.size() > f()) view = std::max(view, views[f()]);
    }
    state_.ledger.push_back(std::move(block));
    state_.certificates[h] = std::move(certificate);
    state_.height = h + 1;
    state_.view = view;
    state_.voted_view = state_.view;
    state_.proposed.reset();
    state_.batch_armed = false;
    state_.view_armed = false;
    state_.proposals.erase(state_.proposals.begin(), state_.proposals.lower_bound(h + 1));
    state_.commit_votes.erase(state_.commit_votes.begin(), state_.commit_votes.lower_bound(h + 1));
    state_.prepare_votes.erase(state_.prepare_votes.begin(), state_.prepare_votes.lower_bound(h + 1));
    state_.view_votes.erase(state_.view_votes.begin(), state_.view_votes.lower_bound(h + 1));
}

bool Replica::maybe_skip(simnet::Actions& out) {
    if (config_.protocol != Protocol::Ebrc || !config_.quick_skip || !working() || state_.pending.empty()) return false;
    const auto master = current_master();
    if (!master || *master == state_.id || !state_.convicted.contains(*master)) return false;
    if (state_.voted_view > state_.view) return false;
    start_view_change(state_.view + 1, out);
    return true;
}

void Replica::start_height(simnet::Actions& out) {
    if (state_.phase == Phase::Committed) state_.phase = Phase::Idle;
    state_.voted_view = std::max(state_.voted_view, state_.view);
    if (working() && !maybe_skip(out)) {
        maybe_propose(out);
        if (!state_.pending.empty() && !state_.view_armed) arm_view_timer(out);
    }
    replay_buffered(out);
    if (state_.height <= state_.open_height) {
        if (config_.protocol == Protocol::Pbft) check_prepared(out);
        check_commit(out);
        check_view_votes(out);
    }
}

bool Replica::verify_certificate(const Block& block, const std::vector<Commit>& certificate) const {
    if (block.height != state_.height || block.previous_hash != state_.ledger.back().digest) return false;
    if (block.tx_digest != batch_digest(block.txs) || block.txs.size() > config_.block_tx_cap) return false;
    if (block.digest != Block::compute_digest(block.height, block.previous_hash, block.tx_digest)) return false;
    std::set<NodeId> senders;
    for (const auto& c : certificate) {
        if (c.sn != block.height || c.digest != block.tx_digest || c.verdict != Verdict::Valid) continue;
        if (!committee().is_consensus(c.sender) || !verify(Message{c}, *keys_)) continue;
        senders.insert(c.sender);
    }
    return senders.size() >= quorum_size(f());
}

std::optional<simnet::Actions> Replica::deliver_block(SimTime now, const Block& block,
                                                      const std::vector<Commit>& certificate) {
    now_ = std::max(now_, now);
    if (!verify_certificate(block, certificate)) return std::nullopt;
    simnet::Actions out;
    append_block(block, certificate);
    start_height(out);
    return out;
}

void Replica::on_block_sync(const BlockSync& bs, simnet::Actions& out) {
    if (bs.block.height != state_.height || !verify_certificate(bs.block, bs.certificate)) return;
    append_block(bs.block, bs.certificate);
    // The certificate proves the commit, so the client may count us.
    if (is_consensus())
        out.push_back(simnet::Send{config_.client,
                                   signed_msg(Reply{config_.client, now_, bs.block.tx_digest, bs.block.height,
                                                    static_cast<std::uint32_t>(committee().size()), Verdict::Valid,
                                                    state_.id, {}})});
    start_height(out);
}

// --- view change ---------------------------------------------------------------

void Replica::arm_view_timer(simnet::Actions& out) {
    if (!working() || state_.pending.empty()) return;
    state_.view_armed = true;
    out.push_back(simnet::SetTimer{config_.view_change_timeout, kViewTimer, ++state_.view_token});
}

bool Replica::timer_live(std::uint32_t kind, std::uint64_t token) const {
    if (kind == kBatchTimer) return state_.batch_armed && token == state_.batch_token;
    if (kind == kViewTimer) return state_.view_armed && token == state_.view_token;
    return false;
}

simnet::Actions Replica::on_timer(SimTime now, std::uint32_t kind, std::uint64_t token) {
    now_ = now;
    simnet::Actions out;
    if (!timer_live(kind, token)) return out;
    if (kind == kBatchTimer) {
        state_.batch_armed = false;
        maybe_propose(out);
    } else {
        state_.view_armed = false;
        if (working() && !state_.pending.empty())
            start_view_change(std::max(state_.view, state_.voted_view) + 1, out);
    }
    return out;
}

void Replica::start_view_change(std::uint64_t target, simnet::Actions& out) {
    if (target <= std::max(state_.voted_view, state_.view)) return;
    state_.voted_view = target;
    broadcast(signed_msg(ViewChange{state_.height, target, state_.id, {}}), out);
    state_.view_votes[state_.height][target].insert(state_.id);
    state_.view_armed = false;
    arm_view_timer(out);
    check_view_votes(out);
}

void Replica::on_view_change(const ViewChange& vc, simnet::Actions& out) {
    if (!is_consensus() || !committee().is_consensus(vc.sender)) return;
    state_.participants[vc.height].insert(vc.sender);
    if (vc.height < state_.height) {
        // The sender is stuck on a height we already finalized.
        auto cert = state_.certificates.find(vc.height);
        if (cert != state_.certificates.end() && vc.height < state_.ledger.size())
            out.push_back(simnet::Send{
                vc.sender, signed_msg(BlockSync{state_.ledger[vc.height], cert->second, state_.id, {}})});
        return;
    }
    state_.view_votes[vc.height][vc.proposed_view].insert(vc.sender);
    if (vc.height == state_.height) check_view_votes(out);
}

void Replica::check_view_votes(simnet::Actions& out) {
    auto it = state_.view_votes.find(state_.height);
    if (it == state_.view_votes.end() || !is_consensus()) return;
    std::optional<std::uint64_t> adopt;
    std::optional<std::uint64_t> join;
    for (const auto& [view, voters] : it->second) {
        if (view <= state_.view) continue;
        if (voters.size() >= quorum_size(f())) adopt = view;
        if (voters.size() >= f() + 1 && view > state_.voted_view) join = view;
    }
    if (adopt) {
        adopt_view(*adopt, out);
    } else if (join) {
        start_view_change(*join, out);
    }
}

void Replica::adopt_view(std::uint64_t view, simnet::Actions& out) {
    auto old_master = current_master();
    if (old_master && *old_master != state_.id) {
        observe(*old_master, Evidence::Ousted);
        state_.convicted.insert(*old_master);
    }
    state_.view = view;
    state_.voted_view = std::max(state_.voted_view, view);
    ++state_.view_changes[state_.height];
    state_.phase = Phase::Idle;
    state_.batch_armed = false;
    state_.view_armed = false;
    arm_view_timer(out);
    if (maybe_skip(out)) return;
    maybe_propose(out);
    replay_buffered(out);
}

void Replica::replay_buffered(simnet::Actions& out) {
    if (state_.buffered.empty()) return;
    auto buffered = std::move(state_.buffered);
    state_.buffered.clear();
    for (const auto& m : buffered) {
        std::visit(overloaded{
                       [&](const Prepare& p) { accept_proposal(p.height, p.view, p.sender, p.txs, p.digest, out); },
                       [&](const PrePrepare& p) {
                           accept_proposal(p.height, p.view, p.sender, p.txs, p.digest, out);
                       },
                       [&](const auto&) {},
                   },
                   m);
    }
}

// --- round driver hooks ---------------------------------------------------------

simnet::Actions Replica::begin_round(SimTime now, std::uint64_t height) {
    now_ = now;
    opened_at_ = now;
    state_.open_height = std::max(state_.open_height, height);
    simnet::Actions out;
    if (config_.protocol == Protocol::Ebrc) djep::apply_effective(state_.membership, height, table_);
    if (state_.height == height) start_height(out);
    return out;
}

void Replica::end_round(std::uint64_t height) {
    if (!is_consensus() || state_.ledger.size() <= height) return;
    const auto& seen = state_.participants[height];
    for (auto id : committee().consensus_nodes)
        if (id != state_.id && !seen.contains(id))
            state_.observations.push_back({id, Evidence::Silent, height, state_.id});
    state_.participants.erase(state_.participants.begin(), state_.participants.lower_bound(height));
}

simnet::Actions Replica::request_exit(SimTime now) {
    now_ = now;
    auto ctx = djep_context();
    if (ctx.master != state_.id) return djep::request_exit(state_.membership, ctx);
    djep::request_exit(state_.membership, ctx);
    Message m = ERequest{state_.id, state_.height + 1, {}};
    sign(m, *keys_);
    return djep::process_exit(state_.membership, std::get<ERequest>(m), ctx).outbound;
}

simnet::Actions Replica::replace_faulty(SimTime now, NodeId accused, std::uint64_t effective_height) {
    now_ = now;
    return djep::replace_faulty(state_.membership, accused, djep_context(), effective_height);
}

// --- client ------------------------------------------------------------------------

void Client::set_committee(const std::vector<NodeId>& members) { members_ = members; }

simnet::Actions Client::submit(const std::vector<Request>& requests) const {
    simnet::Actions out;
    for (const auto& r : requests)
        for (auto id : members_) out.push_back(simnet::Send{id, r});
    return out;
}

simnet::Actions Client::on_message(SimTime now, const Message& msg) {
    const auto* r = std::get_if<Reply>(&msg);
    if (r == nullptr || r->client != id_ || r->verdict != Verdict::Valid) return {};
    if (std::find(members_.begin(), members_.end(), r->sender) == members_.end()) return {};
    if (!verify(msg, *keys_)) return {};
    auto& voters = replies_[r->height][r->digest];
    voters.insert(r->sender);
    const auto needed = max_faults(members_.size()) + 1;
    if (voters.size() < needed) return {};
    auto it = accepted_.find(r->height);
    if (it == accepted_.end()) {
        accepted_[r->height] = {r->digest, now, voters.size()};
    } else if (it->second.digest != r->digest) {
        conflicts_.insert(r->height);
    } else {
        it->second.replies = voters.size();
    }
    return {};
}

}  // namespace ebrc::consensus
