#pragma once

#include <memory>
#include <numeric>

#include "ebrc/consensus.hpp"

namespace ebrc::testing {

inline std::vector<NodeId> ids(std::size_t n) {
    std::vector<NodeId> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Replicas, a client and a simulator wired together, with every node in
// the consensus set in id order.
struct Cluster {
    consensus::Protocol protocol;
    std::size_t n;
    KeyRegistry keys;
    reputation::BehaviorTable table;
    simnet::Simulator sim;
    std::vector<std::unique_ptr<consensus::Replica>> replicas;
    std::unique_ptr<consensus::Client> client;
    std::uint64_t next_seq = 0;

    Cluster(consensus::Protocol p, std::size_t count, simnet::NetworkModel net = {}, simnet::ByzantineProfile profile = {},
            std::uint64_t seed = 1)
        : protocol(p), n(count), sim(net, seed) {
        auto owners = ids(n);
        owners.push_back(kClientIdBase);
        keys = KeyRegistry::generate(seed, owners);
        for (NodeId id = 0; id < n; ++id) table[id] = reputation::make_record(id, keys.public_key(id), 100.0);
        sim.set_adversary(profile, keys);
        consensus::ReplicaConfig rc;
        rc.protocol = p;
        for (NodeId id = 0; id < n; ++id) {
            replicas.push_back(std::make_unique<consensus::Replica>(id, rc, keys, &table));
            sim.add_endpoint(id, *replicas.back());
        }
        client = std::make_unique<consensus::Client>(kClientIdBase, keys);
        sim.add_endpoint(kClientIdBase, *client);
        djep::CommitteeView view;
        view.consensus_nodes = ids(n);
        install(view);
    }

    void install(const djep::CommitteeView& view) {
        for (auto& r : replicas) r->install_committee(view);
        client->set_committee(view.consensus_nodes);
    }

    std::uint64_t height() const { return replicas.front()->ledger().size(); }

    void open(std::uint64_t h) {
        for (auto& r : replicas) sim.emit(r->id(), r->begin_round(sim.now(), h));
    }

    void submit(std::size_t load) {
        auto reqs = simnet::generate_clients(load, {}, 77, kClientIdBase, keys, sim.now(), next_seq);
        next_seq += reqs.size();
        sim.emit(kClientIdBase, client->submit(reqs));
    }

    // One round: open the height, submit, run until accepted, settle.
    bool round(std::uint64_t h, std::size_t load = 15, SimTime limit = millis(5000)) {
        open(h);
        submit(load);
        sim.run_until([&] { return client->accepted(h); }, sim.now() + limit);
        sim.run_to_quiescence(sim.now() + limit, true);
        for (auto& r : replicas) r->end_round(h);
        return client->accepted(h);
    }

    std::size_t count_phase(std::size_t from = 0) const {
        std::size_t c = 0;
        for (std::size_t i = from; i < sim.trace().size(); ++i)
            if (is_consensus_phase(sim.trace()[i].tag)) ++c;
        return c;
    }
};

}  // namespace ebrc::testing
