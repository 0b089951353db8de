#include "doctest.h"

#include "support.hpp"

using namespace ebrc;
using namespace ebrc::djep;
using ebrc::testing::Cluster;
using ebrc::testing::ids;

namespace {

struct Fixture {
    KeyRegistry keys;
    reputation::BehaviorTable table;

    explicit Fixture(std::size_t n) : keys(KeyRegistry::generate(3, ids(n))) {
        for (NodeId id = 0; id < n; ++id) table[id] = reputation::make_record(id, keys.public_key(id), 100.0);
    }

    Context ctx(NodeId self, NodeId master, std::uint64_t height = 5) const {
        return {self, master, height, &keys, &table};
    }

    ERequest erequest(NodeId node, std::uint64_t eff) const {
        Message m = ERequest{node, eff, {}};
        sign(m, keys);
        return std::get<ERequest>(m);
    }
};

MembershipState state_of(std::vector<NodeId> consensus, std::vector<NodeId> candidates = {}) {
    MembershipState s;
    s.committee.consensus_nodes = std::move(consensus);
    s.committee.candidates = std::move(candidates);
    return s;
}

template <class M>
std::vector<std::pair<NodeId, M>> sends_of(const simnet::Actions& acts) {
    std::vector<std::pair<NodeId, M>> out;
    for (const auto& a : acts)
        if (auto* s = std::get_if<simnet::Send>(&a))
            if (auto* m = std::get_if<M>(&s->msg)) out.emplace_back(s->to, *m);
    return out;
}

bool has_event(const MembershipState& s, EventKind k, NodeId node) {
    for (const auto& e : s.events)
        if (e.kind == k && e.node == node) return true;
    return false;
}

}  // namespace

TEST_CASE("exit that keeps the floor finalizes without promotion") {
    Fixture fx(5);
    auto master = state_of({0, 1, 2, 3, 4});
    auto leaver = state_of({0, 1, 2, 3, 4});
    const auto req = request_exit(leaver, fx.ctx(3, 0));
    REQUIRE(sends_of<ERequest>(req).size() == 1);
    CHECK(sends_of<ERequest>(req)[0].first == 0);

    const auto out = process_exit(master, sends_of<ERequest>(req)[0].second, fx.ctx(0, 0));
    CHECK_FALSE(out.rejected);
    CHECK_FALSE(out.promotion_triggered);
    const auto commits = sends_of<ExitCommit>(out.outbound);
    // One ERequest plus m-1 ExitCommits.
    CHECK(1 + commits.size() == 1 + (5 - 1));
    for (const auto& [to, ec] : commits) CHECK(verify(Message{ec}, fx.keys));

    apply_effective(master, 6, &fx.table);
    CHECK(master.committee.size() == 4);
    CHECK_FALSE(master.committee.is_consensus(3));

    auto peer = state_of({0, 1, 2, 3, 4});
    on_exit_commit(peer, commits[0].second, fx.ctx(1, 0));
    apply_effective(peer, 5, &fx.table);
    CHECK(peer.committee.size() == 5);  // not yet effective
    apply_effective(peer, 6, &fx.table);
    CHECK(peer.committee == master.committee);
}

TEST_CASE("exit below the floor promotes the best candidate first") {
    Fixture fx(6);
    fx.table[4].reputation_history.push_back(0.6);
    fx.table[5].reputation_history.push_back(0.8);
    auto master = state_of({0, 1, 2, 3}, {4, 5});
    const auto out = process_exit(master, fx.erequest(3, 6), fx.ctx(0, 0));
    CHECK(out.promotion_triggered);
    const auto changes = sends_of<Change>(out.outbound);
    REQUIRE(changes.size() == 1);
    CHECK(changes[0].first == 5);
    CHECK(sends_of<ExitCommit>(out.outbound).empty());
    CHECK(master.exits_awaiting_join.contains(3));

    // Candidate side answers with a Urequest to every consensus node.
    auto cand = state_of({0, 1, 2, 3}, {4, 5});
    const auto ureq = on_change(cand, changes[0].second, fx.ctx(5, 0));
    const auto urequests = sends_of<Urequest>(ureq);
    REQUIRE(urequests.size() == 4);

    // The master verifies it, confirms the join and now finalizes the exit.
    const auto after = on_urequest(master, urequests[0].second, fx.ctx(0, 0));
    CHECK(sends_of<JoinCommit>(after).size() == 1);
    const auto commits = sends_of<ExitCommit>(after);
    CHECK(commits.size() == 3 + 1);  // three members plus the joiner
    apply_effective(master, 6, &fx.table);
    CHECK(master.committee.size() == 4);
    CHECK(master.committee.is_consensus(5));
    CHECK_FALSE(master.committee.is_consensus(3));
}

TEST_CASE("forged exit request is rejected and reported") {
    Fixture fx(5);
    auto master = state_of({0, 1, 2, 3, 4});
    auto req = fx.erequest(3, 6);
    req.node = 2;  // signature no longer matches
    const auto out = process_exit(master, req, fx.ctx(0, 0));
    CHECK(out.rejected);
    const auto reports = sends_of<Report>(out.outbound);
    REQUIRE_FALSE(reports.empty());
    CHECK(reports[0].second.accused == 2);
    CHECK(reports[0].second.evidence == Evidence::BadSignature);
    CHECK(has_event(master, EventKind::ExitRejected, 2));
}

TEST_CASE("exit at the floor with no candidates stalls") {
    Fixture fx(4);
    auto master = state_of({0, 1, 2, 3});
    const auto out = process_exit(master, fx.erequest(3, 6), fx.ctx(0, 0));
    CHECK(out.rejected);
    CHECK(has_event(master, EventKind::Stalled, 3));
    apply_effective(master, 6, &fx.table);
    CHECK(master.committee.size() == 4);
}

TEST_CASE("join rejected on reputation mismatch") {
    Fixture fx(5);
    auto member = state_of({0, 1, 2, 3}, {4});
    Message u = Urequest{4, 0.99, 6, {}};
    sign(u, fx.keys);
    const auto out = on_urequest(member, std::get<Urequest>(u), fx.ctx(1, 0));
    CHECK(has_event(member, EventKind::JoinRejected, 4));
    const auto reports = sends_of<Report>(out);
    REQUIRE_FALSE(reports.empty());
    CHECK(reports[0].second.evidence == Evidence::ReputationMismatch);
    CHECK(sends_of<JoinCommit>(out).empty());
}

TEST_CASE("join activates at 2f+1 confirmations") {
    Fixture fx(5);
    auto cand = state_of({0, 1, 2, 3}, {4});
    for (NodeId from : {0u, 1u}) {
        Message jc = JoinCommit{4, 6, from, {}};
        sign(jc, fx.keys);
        on_join_commit(cand, std::get<JoinCommit>(jc), fx.ctx(4, 0));
    }
    CHECK_FALSE(cand.activation_height);
    Message jc = JoinCommit{4, 6, 2, {}};
    sign(jc, fx.keys);
    on_join_commit(cand, std::get<JoinCommit>(jc), fx.ctx(4, 0));
    CHECK(cand.activation_height == 6u);
    CHECK(has_event(cand, EventKind::JoinActivated, 4));
}

TEST_CASE("convicted master is demoted and replaced by the top candidate") {
    Fixture fx(6);
    fx.table[4].reputation_history.push_back(0.9);
    fx.table[5].reputation_history.push_back(0.3);
    // Node 1 is master after the view change that ousted node 0.
    auto m1 = state_of({0, 1, 2, 3}, {4, 5});
    const auto out = replace_faulty(m1, 0, fx.ctx(1, 1), 6);
    const auto changes = sends_of<Change>(out);
    REQUIRE(changes.size() == 1);
    CHECK(changes[0].first == 4);

    auto cand = state_of({0, 1, 2, 3}, {4, 5});
    const auto u = sends_of<Urequest>(on_change(cand, changes[0].second, fx.ctx(4, 1)));
    REQUIRE_FALSE(u.empty());
    on_urequest(m1, u[0].second, fx.ctx(1, 1));
    apply_effective(m1, 6, &fx.table);
    CHECK(has_event(m1, EventKind::Demoted, 0));
    CHECK(m1.committee.size() == 4);
    // Highest reputation comes first, so the master order is recomputed.
    CHECK(m1.committee.consensus_nodes.front() == 4);
    CHECK_FALSE(m1.committee.is_consensus(0));
}

TEST_CASE("demotion that would break the floor is held back") {
    Fixture fx(4);
    auto s = state_of({0, 1, 2, 3});
    replace_faulty(s, 2, fx.ctx(1, 0), 6);
    apply_effective(s, 6, &fx.table);
    CHECK(s.committee.size() == 4);
    CHECK(has_event(s, EventKind::Stalled, 2));
}

TEST_CASE("replace_faulty on a non-member is a no-op") {
    Fixture fx(6);
    auto s = state_of({0, 1, 2, 3}, {4});
    CHECK(replace_faulty(s, 5, fx.ctx(0, 0), 6).empty());
    CHECK(s.pending_demotions.empty());
}

TEST_CASE("projected size accounts for pending changes") {
    auto s = state_of({0, 1, 2, 3, 4}, {5});
    CHECK(s.projected_size() == 5);
    s.pending_exits[1] = {6, false};
    CHECK(s.projected_size() == 4);
    s.pending_joins[5] = {6, 0.5};
    CHECK(s.projected_size() == 5);
    s.pending_demotions[1] = 6;
    CHECK(s.projected_size() == 5);  // same node only leaves once
}

TEST_CASE("exit during live consensus keeps the committee running") {
    Cluster c(consensus::Protocol::Ebrc, 5);
    REQUIRE(c.round(1));
    const auto before = c.sim.trace().size();
    c.sim.emit(3, c.replicas[3]->request_exit(c.sim.now()));
    REQUIRE(c.round(2));
    std::size_t membership = 0;
    for (std::size_t i = before; i < c.sim.trace().size(); ++i) membership += is_membership(c.sim.trace()[i].tag);
    CHECK(membership == 1 + (5 - 1));
    c.open(3);
    for (auto& r : c.replicas) {
        CHECK(r->committee().size() == 4);
        CHECK_FALSE(r->committee().is_consensus(3));
    }
    c.client->set_committee(c.replicas[0]->committee().consensus_nodes);
    REQUIRE(c.round(3));
    CHECK(c.replicas[0]->ledger().size() == 4);
}
