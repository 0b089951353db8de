#include "ebrc/simnet.hpp"

#include <algorithm>
#include <sstream>

namespace ebrc::simnet {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string to_string(Behavior b) {
    switch (b) {
        case Behavior::Honest: return "honest";
        case Behavior::Silent: return "silent";
        case Behavior::Equivocate: return "equivocate";
        case Behavior::CorruptDigest: return "corrupt_digest";
        case Behavior::Lazy: return "lazy";
    }
    return "honest";
}

Behavior behavior_from_string(const std::string& s) {
    if (s == "honest") return Behavior::Honest;
    if (s == "silent") return Behavior::Silent;
    if (s == "equivocate") return Behavior::Equivocate;
    if (s == "corrupt_digest" || s == "corrupt") return Behavior::CorruptDigest;
    if (s == "lazy") return Behavior::Lazy;
    throw std::invalid_argument("unknown byzantine behavior '" + s + "'");
}

bool ByzantineProfile::is_byzantine(NodeId id, std::uint64_t epoch) const {
    return behavior != Behavior::Honest && node_ids.contains(id) && epoch >= first_epoch && epoch <= last_epoch;
}

namespace {

void flip(Hash256& h) {
    for (auto& b : h.bytes) b = static_cast<std::uint8_t>(~b);
}

// Returns true when the message was changed.
bool corrupt_digest(Message& m) {
    return std::visit(
        [](auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, Prepare> || std::is_same_v<T, PrePrepare> || std::is_same_v<T, Commit> ||
                          std::is_same_v<T, PrepareVote> || std::is_same_v<T, Reply>) {
                flip(r.digest);
                return true;
            } else {
                return false;
            }
        },
        m);
}

// A conflicting but internally consistent proposal, or a flipped digest for
// votes.
bool equivocate(Message& m) {
    auto alter_batch = [](auto& p) {
        if (!p.txs.empty())
            p.txs.pop_back();
        else
            p.timestamp += 1;
        p.digest = batch_digest(p.txs);
        return true;
    };
    if (auto* p = std::get_if<Prepare>(&m)) return alter_batch(*p);
    if (auto* p = std::get_if<PrePrepare>(&m)) return alter_batch(*p);
    return corrupt_digest(m);
}

}  // namespace

std::vector<Outbound> apply_byzantine_filter(const ByzantineProfile& profile, NodeId sender,
                                             std::vector<Outbound> outbound, const KeyRegistry& keys,
                                             std::uint64_t epoch) {
    if (!profile.is_byzantine(sender, epoch)) return outbound;

    switch (profile.behavior) {
        case Behavior::Honest: return outbound;
        case Behavior::Silent: return {};
        case Behavior::Lazy:
            for (auto& o : outbound) o.latency_factor *= profile.lazy_factor;
            return outbound;
        case Behavior::CorruptDigest:
            for (auto& o : outbound)
                if (corrupt_digest(o.msg)) sign(o.msg, keys);
            return outbound;
        case Behavior::Equivocate: {
            // Split the recipients of each message kind into two halves by id;
            // the upper half sees the conflicting version.
            std::map<std::string_view, std::vector<std::size_t>> by_tag;
            for (std::size_t i = 0; i < outbound.size(); ++i) by_tag[tag(outbound[i].msg)].push_back(i);
            for (auto& [t, idx] : by_tag) {
                std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return outbound[a].to < outbound[b].to; });
                for (std::size_t k = idx.size() / 2; k < idx.size(); ++k) {
                    auto& o = outbound[idx[k]];
                    if (equivocate(o.msg)) sign(o.msg, keys);
                }
            }
            return outbound;
        }
    }
    return outbound;
}

std::vector<Request> generate_clients(std::size_t load, const PayloadSizes& sizes, std::uint64_t seed, NodeId client,
                                      const KeyRegistry& keys, SimTime start_time, std::uint64_t first_seq) {
    std::vector<Request> out;
    out.reserve(load);
    const auto span = static_cast<std::uint64_t>(std::max(sizes.max_bytes, sizes.min_bytes) - sizes.min_bytes) + 1;
    for (std::size_t i = 0; i < load; ++i) {
        const auto seq = first_seq + i;
        const auto draw = splitmix64(seed ^ splitmix64(seq * 0x100000001b3ULL + client));
        Request r;
        r.timestamp = start_time + static_cast<SimTime>(i);
        r.tx.client = client;
        r.tx.seq = seq;
        r.tx.timestamp = r.timestamp;
        r.tx.payload_size = sizes.min_bytes + static_cast<std::uint32_t>(draw % span);
        r.tx.payload_seed = splitmix64(draw);
        r.tx_digest = r.tx.digest();
        r.client = client;
        r.sender = client;
        Message m = r;
        sign(m, keys);
        out.push_back(std::get<Request>(std::move(m)));
    }
    return out;
}

Simulator::Simulator(NetworkModel model, std::uint64_t seed) : model_(std::move(model)), seed_(seed) {}

void Simulator::add_endpoint(NodeId id, Endpoint& endpoint) { endpoints_[id] = &endpoint; }

void Simulator::set_adversary(ByzantineProfile profile, const KeyRegistry& keys) {
    adversary_ = std::move(profile);
    keys_ = &keys;
}

SimTime Simulator::busy_until(NodeId id) const {
    auto it = busy_.find(id);
    return it == busy_.end() ? 0 : it->second;
}

void Simulator::schedule(SimEvent event) {
    event.sequence = next_sequence_++;
    if (std::holds_alternative<Envelope>(event.payload)) ++in_flight_;
    queue_.push(std::move(event));
}

void Simulator::advance_to(SimTime t) { now_ = std::max(now_, t); }

SimTime Simulator::sample_latency(NodeId from, NodeId to) {
    const auto draw_index = link_draws_[{from, to}]++;
    if (model_.jitter <= 0) return model_.base_latency;
    const auto link = splitmix64(seed_ ^ splitmix64((static_cast<std::uint64_t>(from) << 32) | to));
    const auto r = splitmix64(link + draw_index);
    return model_.base_latency + static_cast<SimTime>(r % static_cast<std::uint64_t>(model_.jitter + 1));
}

bool Simulator::should_drop(NodeId from, NodeId to, SimTime at) {
    for (const auto& p : model_.partitions) {
        if (at < p.start || at >= p.end) continue;
        if (p.nodes.contains(from) != p.nodes.contains(to)) return true;
    }
    if (model_.drop_rate <= 0.0) return false;
    const auto r = splitmix64(seed_ ^ 0x5deece66dULL ^ splitmix64(counters_.scheduled));
    return static_cast<double>(r >> 11) * 0x1.0p-53 < model_.drop_rate;
}

void Simulator::emit(NodeId from, Actions actions) { dispatch(from, now_, std::move(actions)); }

void Simulator::dispatch(NodeId from, SimTime depart, Actions actions) {
    std::vector<Outbound> sends;
    for (auto& a : actions) {
        if (auto* t = std::get_if<SetTimer>(&a)) {
            schedule({depart + t->delay, 0, from, TimerTick{t->kind, t->token}});
        } else {
            auto& s = std::get<Send>(a);
            sends.push_back({s.to, std::move(s.msg), 1.0});
        }
    }
    if (keys_ != nullptr) sends = apply_byzantine_filter(adversary_, from, std::move(sends), *keys_, epoch_);

    for (auto& o : sends) {
        ++counters_.scheduled;
        const auto latency = static_cast<SimTime>(static_cast<double>(sample_latency(from, o.to)) * o.latency_factor);
        if (should_drop(from, o.to, depart)) {
            ++counters_.dropped;
            trace_.push_back({depart, from, o.to, tag(o.msg), carried_digest(o.msg), round_, true});
            continue;
        }
        schedule({depart + latency, 0, o.to, Envelope{from, o.to, std::move(o.msg), round_}});
    }
}

void Simulator::discard_dead_timers() {
    while (!queue_.empty()) {
        const auto* tick = std::get_if<TimerTick>(&queue_.top().payload);
        if (tick == nullptr) return;
        auto it = endpoints_.find(queue_.top().target);
        if (it != endpoints_.end() && it->second->timer_live(tick->kind, tick->token)) return;
        queue_.pop();
    }
}

bool Simulator::step_one() {
    if (queue_.empty()) return false;
    SimEvent ev = queue_.top();
    queue_.pop();
    if (std::holds_alternative<Envelope>(ev.payload)) --in_flight_;
    now_ = std::max(now_, ev.deliver_at);

    const bool is_client = ev.target >= kClientIdBase;
    if (auto* env = std::get_if<Envelope>(&ev.payload)) {
        auto busy = busy_.find(ev.target);
        if (!is_client && busy != busy_.end() && busy->second > now_) {
            // Receiver still working: hold the message until it is free.
            ev.deliver_at = busy->second;
            schedule(std::move(ev));
            return true;
        }
        ++counters_.delivered;
        trace_.push_back({now_, env->from, env->to, tag(env->msg), carried_digest(env->msg), env->round, false});
        auto it = endpoints_.find(ev.target);
        if (it == endpoints_.end()) return true;
        SimTime done = now_;
        if (!is_client) {
            done = now_ + model_.processing_cost;
            busy_[ev.target] = done;
        }
        dispatch(ev.target, done, it->second->on_message(now_, env->msg));
    } else {
        const auto& tick = std::get<TimerTick>(ev.payload);
        auto it = endpoints_.find(ev.target);
        if (it == endpoints_.end()) return true;
        const SimTime depart = std::max(now_, busy_until(ev.target));
        dispatch(ev.target, depart, it->second->on_timer(now_, tick.kind, tick.token));
    }
    return true;
}

RunStatus Simulator::run_until(const std::function<bool()>& done, SimTime time_limit) {
    while (!done()) {
        discard_dead_timers();
        if (queue_.empty() || queue_.top().deliver_at > time_limit) return RunStatus::TimedOut;
        step_one();
    }
    return RunStatus::Done;
}

RunStatus Simulator::run_to_quiescence(SimTime time_limit, bool messages_only) {
    for (discard_dead_timers(); messages_only ? in_flight_ > 0 : !queue_.empty(); discard_dead_timers()) {
        if (queue_.top().deliver_at > time_limit) return RunStatus::TimedOut;
        step_one();
    }
    return RunStatus::Done;
}

std::string Simulator::format_trace_line(const TraceRecord& r) {
    std::ostringstream os;
    os << r.time << ' ' << r.from << ' ' << r.to << ' ' << r.tag << ' ' << r.digest.short_hex() << ' ' << r.round;
    if (r.dropped) os << " dropped";
    return os.str();
}

}  // namespace ebrc::simnet
