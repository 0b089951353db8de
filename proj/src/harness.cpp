#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ebrc/harness.hpp"

namespace ebrc::harness {

using consensus::Protocol;
using consensus::Replica;

namespace {

constexpr SimTime kNeverConnects = std::numeric_limits<SimTime>::max() / 4;

struct ObservationKey {
    NodeId accused = 0;
    Evidence evidence = Evidence::Silent;
    std::uint64_t height = 0;
    auto operator<=>(const ObservationKey&) const = default;
};

std::vector<NodeId> pick_byzantine(const ScenarioConfig& c) {
    if (!c.byzantine.nodes.empty()) {
        std::set<NodeId> unique(c.byzantine.nodes.begin(), c.byzantine.nodes.end());
        return {unique.begin(), unique.end()};
    }
    if (c.byzantine.count == 0 || c.byzantine.behavior == simnet::Behavior::Honest) return {};
    std::vector<NodeId> ids(c.node_count);
    std::iota(ids.begin(), ids.end(), 0);
    std::uint64_t state = simnet::splitmix64(c.seed ^ 0xb12a47ULL);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        state = simnet::splitmix64(state);
        std::swap(ids[i], ids[state % (i + 1)]);
    }
    ids.resize(c.byzantine.count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

djep::CommitteeView all_nodes_view(const ScenarioConfig& c, const reputation::BehaviorTable& table) {
    djep::CommitteeView view;
    for (NodeId id = 0; id < c.node_count; ++id) view.consensus_nodes.push_back(id);
    if (c.protocol == Protocol::Ebrc) {
        std::stable_sort(view.consensus_nodes.begin(), view.consensus_nodes.end(), [&](NodeId a, NodeId b) {
            return table.at(a).reputation() > table.at(b).reputation();
        });
    }
    return view;
}

class Run {
  public:
    Run(const ScenarioConfig& c, bool keep_trace) : c_(c), keep_trace_(keep_trace), sim_(c.network, c.seed) {
        std::vector<NodeId> owners;
        for (NodeId id = 0; id < c.node_count; ++id) owners.push_back(id);
        owners.push_back(kClientIdBase);
        keys_ = KeyRegistry::generate(c.seed, owners);
        for (NodeId id = 0; id < c.node_count; ++id) {
            auto d = c.deposits.find(id);
            table_[id] = reputation::make_record(id, keys_.public_key(id),
                                                 d == c.deposits.end() ? c.default_deposit : d->second);
        }
        reputation::apply_deposit_cap(table_, c.deposit_cap);

        byzantine_ = pick_byzantine(c);
        profile_.node_ids = {byzantine_.begin(), byzantine_.end()};
        profile_.behavior = byzantine_.empty() ? simnet::Behavior::Honest : c.byzantine.behavior;
        profile_.first_epoch = c.byzantine.first_epoch;
        profile_.last_epoch = c.byzantine.last_epoch;
        profile_.lazy_factor = c.byzantine.lazy_factor;
        profile_.over_threshold = c.byzantine.allow_over_threshold;
        sim_.set_adversary(profile_, keys_);

        consensus::ReplicaConfig rc;
        rc.protocol = c.protocol;
        rc.block_tx_cap = c.block_tx_cap;
        rc.batch_wait = c.batch_wait;
        rc.view_change_timeout = c.view_change_timeout;
        rc.quick_skip = c.quick_skip;
        rc.client = kClientIdBase;
        for (NodeId id = 0; id < c.node_count; ++id)
            replicas_.push_back(std::make_unique<Replica>(id, rc, keys_, &table_));
        for (auto& r : replicas_) sim_.add_endpoint(r->id(), *r);
        client_ = std::make_unique<consensus::Client>(kClientIdBase, keys_);
        sim_.add_endpoint(kClientIdBase, *client_);
        event_index_.assign(c.node_count, 0);
        observation_index_.assign(c.node_count, 0);

        report_.name = c.name;
        report_.protocol = c.protocol;
        report_.node_count = c.node_count;
        report_.seed = c.seed;
        report_.byzantine_nodes = byzantine_;
        for (NodeId id = 0; id < c.node_count; ++id) report_.election_counts[id] = 0;
    }

    MetricsReport execute() {
        try {
            std::uint64_t round = 0;
            for (std::uint64_t epoch = 0; epoch < c_.epochs; ++epoch) {
                start_epoch(epoch);
                epoch_rounds_.clear();
                for (std::uint64_t r = 0; r < c_.rounds_per_epoch; ++r, ++round) run_round(epoch, round);
                end_epoch(epoch, round);
            }
        } catch (const election::ElectionFailed& e) {
            report_.error = e.what();
        } catch (const consensus::QuorumViolation& e) {
            report_.safety_violation = true;
            report_.safety_detail = e.what();
        } catch (const ProtocolError& e) {
            report_.safety_violation = true;
            report_.safety_detail = e.what();
        }
        finish();
        return std::move(report_);
    }

  private:
    bool honest_now(NodeId id) const { return !profile_.is_byzantine(id, epoch_); }
    bool ever_byzantine(NodeId id) const { return profile_.node_ids.contains(id); }

    Replica& replica(NodeId id) { return *replicas_.at(id); }

    // Most advanced honest consensus replica that was already a member last
    // round; fall back to any honest one.
    Replica& reference() {
        Replica* best = nullptr;
        for (auto& r : replicas_) {
            if (!honest_now(r->id()) || !r->is_consensus() || !incumbents_.contains(r->id())) continue;
            if (best == nullptr || r->ledger().size() > best->ledger().size()) best = r.get();
        }
        if (best != nullptr) return *best;
        for (auto& r : replicas_)
            if (best == nullptr || r->ledger().size() > best->ledger().size()) best = r.get();
        return *best;
    }

    std::uint64_t last_height() { return reference().ledger().size() - 1; }

    void drain(SimTime budget) { sim_.run_to_quiescence(sim_.now() + budget, true); }

    void start_epoch(std::uint64_t epoch) {
        epoch_ = epoch;
        sim_.set_epoch(epoch);
        djep::CommitteeView view;
        if (c_.protocol == Protocol::Pbft || c_.committee == CommitteeMode::All) {
            view = all_nodes_view(c_, table_);
        } else {
            const auto& last = reference().ledger().back();
            const Hash256 seed = epoch == 0 ? election::derive_seed(
                                                  DigestWriter().str("ebrc/run-seed").u64(c_.seed).finish())
                                            : election::derive_seed(last.digest);
            election::KeyedDigestVrf vrf(keys_);
            election::ElectionHooks hooks;
            hooks.connect_delay = [this](NodeId id) -> SimTime {
                if (profile_.is_byzantine(id, epoch_)) {
                    if (profile_.behavior == simnet::Behavior::Silent) return kNeverConnects;
                    if (profile_.behavior == simnet::Behavior::Lazy)
                        return static_cast<SimTime>(static_cast<double>(c_.network.base_latency) *
                                                    profile_.lazy_factor);
                }
                return c_.network.base_latency + c_.network.jitter;
            };
            auto elected = election::form_committee_with_retry(table_, c_.election, seed, keys_, vrf, epoch,
                                                               last.height, hooks);
            report_.election_retries += static_cast<std::size_t>(elected.retries);
            view.consensus_nodes = elected.committee.consensus_nodes;
            view.candidates = elected.committee.candidates;
            view.spares = elected.committee.spares;
        }
        for (auto id : view.consensus_nodes) ++report_.election_counts[id];
        incumbents_ = {view.consensus_nodes.begin(), view.consensus_nodes.end()};
        for (auto& r : replicas_) r->install_committee(view);
        std::fill(event_index_.begin(), event_index_.end(), 0);
    }

    // Non-members never see membership traffic, so bring their view in
    // line with the committee before every round.
    void sync_outsiders(std::uint64_t height) {
        const auto view = reference().committee();
        for (auto& r : replicas_) {
            if (r->committee() == view) continue;
            // Newly promoted nodes only saw part of the membership traffic.
            if (view.is_consensus(r->id()) && r->is_consensus() && incumbents_.contains(r->id())) continue;
            r->sync_committee(view);
            sim_.emit(r->id(), r->begin_round(sim_.now(), height));
        }
    }

    void submit_requests(std::uint64_t round) {
        auto fresh = simnet::generate_clients(c_.client_load, c_.payload, c_.seed ^ simnet::splitmix64(round + 1),
                                              kClientIdBase, keys_, sim_.now(), next_seq_);
        next_seq_ += fresh.size();
        std::vector<Request> batch;
        for (const auto& [key, r] : outstanding_) batch.push_back(r);
        for (auto& r : fresh) {
            outstanding_[consensus::key_of(r.tx)] = r;
            batch.push_back(std::move(r));
        }
        sim_.emit(kClientIdBase, client_->submit(batch));
    }

    void run_round(std::uint64_t epoch, std::uint64_t round) {
        const auto height = last_height() + 1;
        round_ = round;
        const auto trace_start = sim_.trace().size();
        sim_.set_round(round);
        RoundRecord rec;
        rec.round = round;
        rec.epoch = epoch;
        rec.height = height;
        rec.started = sim_.now();

        for (auto& r : replicas_) sim_.emit(r->id(), r->begin_round(sim_.now(), height));
        sync_outsiders(height);
        const auto view = reference().committee();
        incumbents_ = {view.consensus_nodes.begin(), view.consensus_nodes.end()};
        rec.committee_size = view.size();
        client_->set_committee(view.consensus_nodes);
        round_members_.push_back(view.consensus_nodes);

        std::optional<DjepMeasure> measure;
        for (const auto& e : c_.djep) {
            if (e.round != round) continue;
            auto node = e.node;
            if (!node) {
                const auto master = reference().current_master();
                for (auto it = view.consensus_nodes.rbegin(); it != view.consensus_nodes.rend(); ++it)
                    if (*it != master) {
                        node = *it;
                        break;
                    }
            }
            if (!node || !view.is_consensus(*node)) {
                log_membership(round, "exit_skipped", node.value_or(0), height);
                continue;
            }
            measure = DjepMeasure{round, *node, false, false, 0, sim_.now(), 0, 0.0};
            sim_.emit(*node, replica(*node).request_exit(sim_.now()));
        }

        submit_requests(round);
        const SimTime deadline = sim_.now() + c_.round_time_limit;
        sim_.run_until([&] { return client_->accepted(height); }, deadline);
        drain(c_.round_time_limit);

        for (auto& r : replicas_) r->end_round(height);
        catch_up();
        confirm_observations(height);
        collect_membership(round);

        rec.finished = sim_.now();
        rec.committed = client_->accepted(height) && reference().ledger().size() > height;
        std::uint32_t vc = 0;
        for (auto& r : replicas_) {
            if (!honest_now(r->id())) continue;
            auto it = r->state().view_changes.find(height);
            if (it != r->state().view_changes.end()) vc = std::max(vc, it->second);
        }
        rec.view_changes = vc;
        if (rec.committed) {
            const auto& acc = client_->acceptances().at(height);
            const auto& block = reference().ledger()[height];
            rec.accepted = acc.time;
            rec.txs = block.txs.size();
            double sum = 0.0;
            for (const auto& tx : block.txs) {
                const double l = compute_latency(tx.timestamp, acc.time);
                report_.latencies_ms.push_back(l);
                sum += l;
                outstanding_.erase(consensus::key_of(tx));
            }
            rec.latency_ms = block.txs.empty() ? 0.0 : sum / static_cast<double>(block.txs.size());
            report_.committed_tx += block.txs.size();
        } else if (reference().ledger().size() > height) {
            for (const auto& tx : reference().ledger()[height].txs) outstanding_.erase(consensus::key_of(tx));
        }

        const auto& trace = sim_.trace();
        SimTime last_exit_commit = 0;
        for (std::size_t i = trace_start; i < trace.size(); ++i) {
            const auto& t = trace[i];
            if (t.round != round) continue;
            if (is_consensus_phase(t.tag)) ++rec.protocol_messages;
            if (is_membership(t.tag)) {
                ++rec.membership_messages;
                if (t.tag == "exit_commit") last_exit_commit = std::max(last_exit_commit, t.time);
            }
        }
        if (measure) {
            measure->membership_messages = rec.membership_messages;
            for (auto& r : replicas_) {
                for (const auto& ev : r->membership().events) {
                    if (ev.node != measure->node) continue;
                    if (ev.kind == djep::EventKind::ExitFinalized) measure->finalized = true;
                }
                for (const auto& ev : r->membership().events)
                    if (ev.kind == djep::EventKind::PromotionTriggered && ev.height == height + 1)
                        measure->promotion = true;
            }
            if (measure->finalized) {
                measure->finalized_at = last_exit_commit > 0 ? last_exit_commit : measure->requested_at;
                measure->delay_ms = to_millis(measure->finalized_at - measure->requested_at);
            }
            report_.djep.push_back(*measure);
        }
        report_.rounds.push_back(rec);
        epoch_rounds_.push_back(rec);
    }

    // Hands committed blocks to replicas that missed them, as a state
    // transfer would.
    void catch_up() {
        auto& ref = reference();
        const auto& ledger = ref.ledger();
        bool moved = false;
        for (auto& r : replicas_) {
            if (r.get() == &ref) continue;
            while (r->ledger().size() < ledger.size()) {
                const auto h = r->ledger().size();
                auto cert = ref.state().certificates.find(h);
                if (cert == ref.state().certificates.end()) break;
                auto out = r->deliver_block(sim_.now(), ledger[h], cert->second);
                if (!out) break;
                sim_.emit(r->id(), std::move(*out));
                moved = true;
            }
        }
        if (moved) drain(c_.round_time_limit);
    }

    void confirm_observations(std::uint64_t height) {
        for (auto& r : replicas_) {
            const auto& obs = r->state().observations;
            auto& idx = observation_index_[r->id()];
            for (; idx < obs.size(); ++idx) {
                if (!honest_now(r->id())) continue;
                const auto& o = obs[idx];
                reporters_[{o.accused, o.evidence, o.height}].insert(o.reporter);
            }
        }
        const auto f = reference().f();
        std::vector<ObservationKey> fresh;
        for (const auto& [key, who] : reporters_) {
            if (who.size() < f + 1 || confirmed_.contains(key)) continue;
            confirmed_.insert(key);
            fresh.push_back(key);
        }
        if (fresh.empty()) return;
        bool sent = false;
        for (const auto& key : fresh) {
            confirmed_log_.push_back(key);
            log_membership(round_, "confirmed_" + std::string(to_string(key.evidence)), key.accused, key.height);
            if (c_.protocol != Protocol::Ebrc) continue;
            if (!reference().committee().is_consensus(key.accused)) continue;
            for (auto& r : replicas_) {
                if (!r->committee().is_consensus(key.accused)) continue;
                auto out = r->replace_faulty(sim_.now(), key.accused, height + 1);
                sent = sent || !out.empty();
                sim_.emit(r->id(), std::move(out));
            }
        }
        if (sent) drain(c_.round_time_limit);
    }

    void log_membership(std::uint64_t round, std::string kind, NodeId node, std::uint64_t height) {
        report_.membership.push_back({round, std::move(kind), node, height});
    }

    void collect_membership(std::uint64_t round) {
        for (auto& r : replicas_) {
            const auto& events = r->membership().events;
            auto& idx = event_index_[r->id()];
            for (; idx < events.size(); ++idx) {
                if (!honest_now(r->id())) continue;
                const auto& ev = events[idx];
                if (!seen_events_.insert({epoch_, ev.kind, ev.node, ev.height}).second) continue;
                log_membership(round, djep::to_string(ev.kind), ev.node, ev.height);
            }
        }
    }

    void end_epoch(std::uint64_t epoch, std::uint64_t rounds_so_far) {
        if (c_.protocol != Protocol::Ebrc) return;
        std::map<NodeId, std::size_t> silent_rounds;
        std::set<std::pair<NodeId, std::uint64_t>> incomplete;
        std::vector<reputation::BehaviorEvent> events;
        for (const auto& key : confirmed_log_) {
            switch (key.evidence) {
                case Evidence::Silent:
                    ++silent_rounds[key.accused];
                    incomplete.insert({key.accused, key.height});
                    break;
                case Evidence::Ousted: incomplete.insert({key.accused, key.height}); break;
                case Evidence::BadProposal:
                case Evidence::BadSignature:
                case Evidence::ReputationMismatch:
                case Evidence::BadVrfProof:
                    events.push_back({reputation::EventKind::ConfirmedReport, key.accused, 0.0, 0});
                    break;
            }
        }
        confirmed_log_.clear();

        const auto first = round_members_.size() - epoch_rounds_.size();
        for (std::size_t i = 0; i < epoch_rounds_.size(); ++i) {
            const auto& rec = epoch_rounds_[i];
            for (auto id : round_members_[first + i]) {
                if (!rec.committed) continue;
                events.push_back({reputation::EventKind::Participation, id, 0.0, 0});
                if (incomplete.contains({id, rec.height}))
                    events.push_back({reputation::EventKind::Incomplete, id, 0.0, 0});
                else
                    events.push_back({reputation::EventKind::BlockProcessed, id, 0.0, rec.txs});
            }
        }
        const double base_ms = to_millis(c_.network.base_latency) + to_millis(c_.network.jitter) / 2.0;
        for (NodeId id = 0; id < c_.node_count; ++id) {
            const auto silent = silent_rounds.contains(id) ? silent_rounds[id] : 0;
            events.push_back({reputation::EventKind::OfflineObserved, id,
                              static_cast<double>(silent) * c_.hours_per_round, 0});
            double latency = base_ms;
            if (profile_.is_byzantine(id, epoch) && profile_.behavior == simnet::Behavior::Lazy)
                latency *= profile_.lazy_factor;
            events.push_back({reputation::EventKind::LatencyObserved, id, latency, 0});
            events.push_back({reputation::EventKind::JoinAgeObserved, id,
                              static_cast<double>(rounds_so_far) * c_.hours_per_round, 0});
        }
        auto updated = reputation::update_behavior_table(table_, events, c_.reputation);
        // Replicas hold a pointer to the table, so assign in place.
        table_ = std::move(updated.table);
    }

    void check_safety() {
        std::map<std::uint64_t, Hash256> agreed;
        for (auto& r : replicas_) {
            if (ever_byzantine(r->id())) continue;
            for (const auto& b : r->ledger()) {
                auto [it, inserted] = agreed.emplace(b.height, b.digest);
                if (!inserted && it->second != b.digest && !report_.safety_violation) {
                    report_.safety_violation = true;
                    std::ostringstream os;
                    os << "honest replicas disagree at height " << b.height;
                    report_.safety_detail = os.str();
                }
            }
        }
        if (!client_->conflicts().empty() && !report_.safety_violation) {
            report_.safety_violation = true;
            report_.safety_detail =
                "client accepted conflicting replies at height " + std::to_string(*client_->conflicts().begin());
        }
    }

    void finish() {
        check_safety();
        auto& ref = reference();
        for (const auto& b : ref.ledger()) {
            if (b.height == 0) continue;
            report_.ledger.push_back({b.height, b.view, b.digest, b.txs.size(), b.committers});
        }
        const auto& lat = report_.latencies_ms;
        if (!lat.empty()) {
            report_.mean_latency_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
            report_.p50_latency_ms = percentile(lat, 0.50);
            report_.p95_latency_ms = percentile(lat, 0.95);
        }
        report_.simulated_seconds = static_cast<double>(sim_.now()) / kMicrosPerSecond;
        report_.tps = compute_tps(report_.committed_tx, report_.simulated_seconds);
        report_.messages = count_messages(sim_.trace());
        for (const auto& [t, n] : report_.messages.by_tag) {
            if (is_consensus_phase(t)) report_.protocol_messages += n;
        }
        auto vc = report_.messages.by_tag.find("view_change");
        report_.view_change_messages = vc == report_.messages.by_tag.end() ? 0 : vc->second;
        report_.liveness_ok = report_.error.empty() && !report_.rounds.empty();
        for (const auto& r : report_.rounds) {
            if (r.committed)
                ++report_.committed_rounds;
            else
                ++report_.aborted_rounds;
            report_.max_view_changes = std::max(report_.max_view_changes, r.view_changes);
            if (!r.committed || r.view_changes > max_faults(r.committee_size) + 1) report_.liveness_ok = false;
        }
        if (keep_trace_)
            for (const auto& t : sim_.trace()) report_.trace_lines.push_back(simnet::Simulator::format_trace_line(t));
    }

    const ScenarioConfig& c_;
    bool keep_trace_;
    simnet::Simulator sim_;
    KeyRegistry keys_;
    reputation::BehaviorTable table_;
    std::vector<NodeId> byzantine_;
    simnet::ByzantineProfile profile_;
    std::vector<std::unique_ptr<Replica>> replicas_;
    std::unique_ptr<consensus::Client> client_;
    std::uint64_t epoch_ = 0;
    std::uint64_t round_ = 0;
    std::set<NodeId> incumbents_;
    std::uint64_t next_seq_ = 0;
    std::map<consensus::TxKey, Request> outstanding_;
    std::vector<std::size_t> event_index_;
    std::vector<std::size_t> observation_index_;
    std::set<std::tuple<std::uint64_t, djep::EventKind, NodeId, std::uint64_t>> seen_events_;
    std::map<ObservationKey, std::set<NodeId>> reporters_;
    std::set<ObservationKey> confirmed_;
    std::vector<ObservationKey> confirmed_log_;
    std::vector<RoundRecord> epoch_rounds_;
    std::vector<std::vector<NodeId>> round_members_;
    MetricsReport report_;
};

}  // namespace

MessageCounts count_messages(const std::vector<simnet::TraceRecord>& trace) {
    MessageCounts counts;
    for (const auto& t : trace) {
        const std::string tag(t.tag);
        ++counts.total;
        ++counts.by_tag[tag];
        ++counts.by_round[t.round];
        ++counts.by_round_tag[t.round][tag];
    }
    return counts;
}

double compute_latency(SimTime submit, SimTime complete) { return to_millis(complete - submit); }

std::optional<double> compute_tps(std::size_t committed_tx, double interval_seconds) {
    if (!(interval_seconds > 0.0)) return std::nullopt;
    return static_cast<double>(committed_tx) / interval_seconds;
}

MetricsReport run_scenario(const ScenarioConfig& config, bool keep_trace) {
    validate(config);
    Run run(config, keep_trace);
    return run.execute();
}

}  // namespace ebrc::harness
