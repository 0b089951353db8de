#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "ebrc/messages.hpp"

namespace ebrc::simnet {

// --- what endpoints emit --------------------------------------------------

struct Send {
    NodeId to = 0;
    Message msg;
};

struct SetTimer {
    SimTime delay = 0;
    std::uint32_t kind = 0;
    std::uint64_t token = 0;
};

using Action = std::variant<Send, SetTimer>;
using Actions = std::vector<Action>;

class Endpoint {
  public:
    virtual ~Endpoint() = default;
    virtual Actions on_message(SimTime now, const Message& msg) = 0;
    virtual Actions on_timer(SimTime now, std::uint32_t kind, std::uint64_t token) = 0;
    // Cancelled timers report false and are discarded without moving the clock.
    virtual bool timer_live(std::uint32_t /*kind*/, std::uint64_t /*token*/) const { return true; }
};

// --- events -----------------------------------------------------------------

struct Envelope {
    NodeId from = 0;
    NodeId to = 0;
    Message msg;
    std::uint64_t round = 0;  // round label at send time
};

struct TimerTick {
    std::uint32_t kind = 0;
    std::uint64_t token = 0;
};

struct SimEvent {
    SimTime deliver_at = 0;
    std::uint64_t sequence = 0;
    NodeId target = 0;
    std::variant<Envelope, TimerTick> payload;
};

struct EventOrder {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
        if (a.deliver_at != b.deliver_at) return a.deliver_at > b.deliver_at;
        return a.sequence > b.sequence;
    }
};

// --- network and adversary ------------------------------------------------

struct Partition {
    SimTime start = 0;
    SimTime end = 0;
    std::set<NodeId> nodes;  // cut off from everyone outside the set
};

struct NetworkModel {
    SimTime base_latency = millis(10);
    SimTime jitter = millis(2);
    double drop_rate = 0.0;
    // CPU time a replica spends on each delivered message; deliveries to
    // a busy replica queue behind it.
    SimTime processing_cost = 50;
    std::vector<Partition> partitions;
};

enum class Behavior { Honest, Silent, Equivocate, CorruptDigest, Lazy };

std::string to_string(Behavior b);
Behavior behavior_from_string(const std::string& s);

struct ByzantineProfile {
    std::set<NodeId> node_ids;
    Behavior behavior = Behavior::Honest;
    std::uint64_t first_epoch = 0;
    std::uint64_t last_epoch = std::numeric_limits<std::uint64_t>::max();
    double lazy_factor = 4.0;
    bool over_threshold = false;

    bool is_byzantine(NodeId id, std::uint64_t epoch) const;
};

struct Outbound {
    NodeId to = 0;
    Message msg;
    double latency_factor = 1.0;
};

// Rewrites what a Byzantine sender puts on the wire. Honest senders pass
// through untouched. Altered messages are re-signed with the sender's own
// key, so receivers see well-formed but wrong content.
std::vector<Outbound> apply_byzantine_filter(const ByzantineProfile& profile, NodeId sender,
                                             std::vector<Outbound> outbound, const KeyRegistry& keys,
                                             std::uint64_t epoch = 0);

// --- clients ----------------------------------------------------------------

struct PayloadSizes {
    std::uint32_t min_bytes = 64;
    std::uint32_t max_bytes = 512;
};

// Deterministic stream of signed Requests with strictly increasing
// timestamps starting at start_time.
std::vector<Request> generate_clients(std::size_t load, const PayloadSizes& sizes, std::uint64_t seed, NodeId client,
                                      const KeyRegistry& keys, SimTime start_time, std::uint64_t first_seq = 0);

// --- the event loop -----------------------------------------------------------

struct TraceRecord {
    SimTime time = 0;
    NodeId from = 0;
    NodeId to = 0;
    std::string_view tag;
    Hash256 digest;
    std::uint64_t round = 0;
    bool dropped = false;
};

enum class RunStatus { Done, TimedOut };

struct SimCounters {
    std::uint64_t scheduled = 0;
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
};

class Simulator {
  public:
    Simulator(NetworkModel model, std::uint64_t seed);

    void add_endpoint(NodeId id, Endpoint& endpoint);
    void set_adversary(ByzantineProfile profile, const KeyRegistry& keys);
    void set_epoch(std::uint64_t epoch) { epoch_ = epoch; }
    // Label stamped on trace records of messages sent from now on.
    void set_round(std::uint64_t round) { round_ = round; }

    SimTime now() const { return now_; }

    // Runs `actions` as if `from` had emitted them at the current time.
    void emit(NodeId from, Actions actions);
    void schedule(SimEvent event);
    void advance_to(SimTime t);

    RunStatus run_until(const std::function<bool()>& done, SimTime time_limit);
    // Runs until no events remain or the time limit passes. With
    // messages_only, stops once no message is in flight; timers may remain.
    RunStatus run_to_quiescence(SimTime time_limit, bool messages_only = false);

    bool idle() const { return queue_.empty(); }
    std::size_t pending() const { return queue_.size(); }
    std::size_t in_flight() const { return in_flight_; }

    const std::vector<TraceRecord>& trace() const { return trace_; }
    const SimCounters& counters() const { return counters_; }
    SimTime busy_until(NodeId id) const;

    static std::string format_trace_line(const TraceRecord& r);

  private:
    bool step_one();
    void discard_dead_timers();
    SimTime sample_latency(NodeId from, NodeId to);
    bool should_drop(NodeId from, NodeId to, SimTime at);
    void dispatch(NodeId from, SimTime depart, Actions actions);

    NetworkModel model_;
    std::uint64_t seed_;
    std::map<NodeId, Endpoint*> endpoints_;
    std::map<NodeId, SimTime> busy_;
    std::map<std::pair<NodeId, NodeId>, std::uint64_t> link_draws_;
    std::priority_queue<SimEvent, std::vector<SimEvent>, EventOrder> queue_;
    std::vector<TraceRecord> trace_;
    SimCounters counters_;
    ByzantineProfile adversary_;
    const KeyRegistry* keys_ = nullptr;
    SimTime now_ = 0;
    std::uint64_t next_sequence_ = 0;
    std::size_t in_flight_ = 0;
    std::uint64_t epoch_ = 0;
    std::uint64_t round_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ebrc::simnet
