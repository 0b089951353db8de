#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ebrc/harness.hpp"

namespace ebrc::harness {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

json rounds_json(const std::vector<RoundRecord>& rounds) {
    json out = json::array();
    for (const auto& r : rounds)
        out.push_back({{"round", r.round},
                       {"epoch", r.epoch},
                       {"height", r.height},
                       {"committed", r.committed},
                       {"started_ms", to_millis(r.started)},
                       {"finished_ms", to_millis(r.finished)},
                       {"accepted_ms", to_millis(r.accepted)},
                       {"latency_ms", r.latency_ms},
                       {"txs", r.txs},
                       {"view_changes", r.view_changes},
                       {"committee_size", r.committee_size},
                       {"protocol_messages", r.protocol_messages},
                       {"membership_messages", r.membership_messages}});
    return out;
}

}  // namespace

json to_json(const MetricsReport& r) {
    json by_round = json::object();
    for (const auto& [round, n] : r.messages.by_round) by_round[std::to_string(round)] = n;
    json elections = json::object();
    for (const auto& [id, n] : r.election_counts) elections[std::to_string(id)] = n;
    json membership = json::array();
    for (const auto& m : r.membership)
        membership.push_back({{"round", m.round}, {"kind", m.kind}, {"node", m.node}, {"height", m.height}});
    json djep = json::array();
    for (const auto& d : r.djep)
        djep.push_back({{"round", d.round},
                        {"node", d.node},
                        {"promotion", d.promotion},
                        {"finalized", d.finalized},
                        {"membership_messages", d.membership_messages},
                        {"requested_at_ms", to_millis(d.requested_at)},
                        {"finalized_at_ms", to_millis(d.finalized_at)},
                        {"delay_ms", d.delay_ms}});
    json ledger = json::array();
    for (const auto& b : r.ledger)
        ledger.push_back({{"height", b.height},
                          {"view", b.view},
                          {"digest", b.digest.hex()},
                          {"txs", b.txs},
                          {"committers", b.committers}});
    json out = {
        {"schema_version", kReportSchemaVersion},
        {"name", r.name},
        {"protocol", consensus::to_string(r.protocol)},
        {"node_count", r.node_count},
        {"seed", r.seed},
        {"byzantine_nodes", r.byzantine_nodes},
        {"latency_ms", {{"mean", r.mean_latency_ms}, {"p50", r.p50_latency_ms}, {"p95", r.p95_latency_ms}}},
        {"tps", r.tps ? json(*r.tps) : json(nullptr)},
        {"committed_tx", r.committed_tx},
        {"simulated_seconds", r.simulated_seconds},
        {"messages", {{"total", r.messages.total}, {"by_tag", r.messages.by_tag}, {"by_round", by_round}}},
        {"protocol_messages", r.protocol_messages},
        {"view_change_messages", r.view_change_messages},
        {"election_counts", elections},
        {"election_retries", r.election_retries},
        {"committed_rounds", r.committed_rounds},
        {"aborted_rounds", r.aborted_rounds},
        {"max_view_changes", r.max_view_changes},
        {"liveness_ok", r.liveness_ok},
        {"safety_violation", r.safety_violation},
        {"safety_detail", r.safety_detail},
        {"error", r.error},
        {"rounds", rounds_json(r.rounds)},
        {"membership", membership},
        {"djep", djep},
        {"ledger", ledger},
    };
    return out;
}

std::vector<std::vector<std::string>> metric_rows(const MetricsReport& r) {
    const auto protocol = consensus::to_string(r.protocol);
    const auto n = std::to_string(r.node_count);
    const auto seed = std::to_string(r.seed);
    std::vector<std::vector<std::string>> rows;
    auto add = [&](const std::string& metric, const std::string& value) {
        rows.push_back({protocol, n, seed, metric, value});
    };
    add("mean_latency_ms", fmt(r.mean_latency_ms));
    add("p50_latency_ms", fmt(r.p50_latency_ms));
    add("p95_latency_ms", fmt(r.p95_latency_ms));
    add("tps", r.tps ? fmt(*r.tps) : "");
    add("committed_tx", std::to_string(r.committed_tx));
    add("committed_rounds", std::to_string(r.committed_rounds));
    add("aborted_rounds", std::to_string(r.aborted_rounds));
    add("messages_total", std::to_string(r.messages.total));
    add("protocol_messages", std::to_string(r.protocol_messages));
    const double per_round =
        r.rounds.empty() ? 0.0 : static_cast<double>(r.protocol_messages) / static_cast<double>(r.rounds.size());
    add("protocol_messages_per_round", fmt(per_round));
    add("view_change_messages", std::to_string(r.view_change_messages));
    add("max_view_changes", std::to_string(r.max_view_changes));
    add("election_retries", std::to_string(r.election_retries));
    add("liveness_ok", r.liveness_ok ? "1" : "0");
    add("safety_violation", r.safety_violation ? "1" : "0");
    return rows;
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream os;
    os << "protocol,n,seed,metric,value\n";
    for (const auto& r : reports)
        for (const auto& row : metric_rows(r)) {
            for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
            os << '\n';
        }
    return os.str();
}

json compare(const std::vector<MetricsReport>& reports) {
    json matrix = {
        {"phases", {{"ebrc", 2}, {"pbft", 3}}},
        {"message_complexity", {{"ebrc", "O(m^2), m < n"}, {"pbft", "O(n^2)"}}},
        {"leader", {{"ebrc", "rotates every block, reputation ordered"}, {"pbft", "fixed until a view change"}}},
        {"committee", {{"ebrc", "VRF elected"}, {"pbft", "all nodes"}}},
        {"dynamic_membership", {{"ebrc", true}, {"pbft", false}}},
    };
    json runs = json::array();
    std::map<std::string, std::map<std::string, std::size_t>> tags;
    for (const auto& r : reports) {
        runs.push_back({{"name", r.name},
                        {"protocol", consensus::to_string(r.protocol)},
                        {"node_count", r.node_count},
                        {"seed", r.seed},
                        {"mean_latency_ms", r.mean_latency_ms},
                        {"p95_latency_ms", r.p95_latency_ms},
                        {"tps", r.tps ? json(*r.tps) : json(nullptr)},
                        {"protocol_messages", r.protocol_messages},
                        {"view_change_messages", r.view_change_messages},
                        {"committed_rounds", r.committed_rounds},
                        {"aborted_rounds", r.aborted_rounds},
                        {"safety_violation", r.safety_violation}});
        auto& t = tags[consensus::to_string(r.protocol)];
        for (const auto& [tag, n] : r.messages.by_tag) t[tag] += n;
    }
    return {{"schema_version", kReportSchemaVersion}, {"matrix", matrix}, {"runs", runs}, {"messages_by_tag", tags}};
}

FairnessStats fairness_stats(const std::vector<std::size_t>& counts) {
    FairnessStats s;
    if (counts.empty()) return s;
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    s.mean = total / static_cast<double>(counts.size());
    s.min_count = *std::min_element(counts.begin(), counts.end());
    s.max_count = *std::max_element(counts.begin(), counts.end());
    if (counts.size() < 2 || s.mean <= 0.0) return s;
    for (auto c : counts) {
        const double d = static_cast<double>(c) - s.mean;
        s.chi_square += d * d / s.mean;
    }
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    s.p_value = boost::math::cdf(boost::math::complement(dist, s.chi_square));
    return s;
}

FairnessReport run_fairness(std::size_t nodes, std::size_t epochs, bool poison_odd, std::uint64_t seed,
                            const election::ElectionConfig& config) {
    FairnessReport out;
    out.nodes = nodes;
    out.epochs = epochs;
    out.poison_odd = poison_odd;
    out.counts.assign(nodes, 0);

    std::vector<NodeId> owners(nodes);
    std::iota(owners.begin(), owners.end(), 0);
    const auto keys = KeyRegistry::generate(seed, owners);
    reputation::BehaviorTable table;
    for (auto id : owners) table[id] = reputation::make_record(id, keys.public_key(id), 100.0);
    if (poison_odd) {
        std::vector<reputation::BehaviorEvent> events;
        for (auto id : owners) {
            for (int i = 0; i < 10; ++i) events.push_back({reputation::EventKind::Participation, id, 0.0, 0});
            if (id % 2 == 1)
                for (int i = 0; i < 4; ++i) events.push_back({reputation::EventKind::ConfirmedReport, id, 0.0, 0});
        }
        table = reputation::update_behavior_table(table, events).table;
    }

    election::KeyedDigestVrf vrf(keys);
    Hash256 current = election::derive_seed(DigestWriter().str("ebrc/fairness").u64(seed).finish());
    for (std::size_t e = 0; e < epochs; ++e) {
        try {
            auto elected = election::form_committee_with_retry(table, config, current, keys, vrf, e);
            out.retries += static_cast<std::size_t>(elected.retries);
            for (auto id : elected.committee.consensus_nodes) ++out.counts[id];
        } catch (const election::ElectionFailed&) {
            ++out.failed_epochs;
        }
        // Retries walk derive_seed chains, so the next epoch seed must come
        // from a separate domain or consecutive epochs would share seeds.
        current = election::derive_seed(DigestWriter().str("ebrc/fairness/epoch").hash(current).u64(e + 1).finish());
    }

    out.stats = fairness_stats(out.counts);
    double odd = 0.0, even = 0.0;
    std::size_t n_odd = 0, n_even = 0;
    for (std::size_t id = 0; id < nodes; ++id) {
        if (id % 2 == 1) {
            odd += static_cast<double>(out.counts[id]);
            ++n_odd;
        } else {
            even += static_cast<double>(out.counts[id]);
            ++n_even;
        }
    }
    out.odd_mean = n_odd ? odd / static_cast<double>(n_odd) : 0.0;
    out.even_mean = n_even ? even / static_cast<double>(n_even) : 0.0;
    return out;
}

json to_json(const FairnessReport& r) {
    return {{"schema_version", kReportSchemaVersion},
            {"nodes", r.nodes},
            {"epochs", r.epochs},
            {"poison_odd", r.poison_odd},
            {"counts", r.counts},
            {"chi_square", r.stats.chi_square},
            {"p_value", r.stats.p_value},
            {"min", r.stats.min_count},
            {"max", r.stats.max_count},
            {"mean", r.stats.mean},
            {"odd_mean", r.odd_mean},
            {"even_mean", r.even_mean},
            {"retries", r.retries},
            {"failed_epochs", r.failed_epochs}};
}

EmptyCommitteeResult empty_committee_frequency(std::size_t nodes, double omega, std::size_t trials,
                                               std::uint64_t seed) {
    std::vector<NodeId> owners(nodes);
    std::iota(owners.begin(), owners.end(), 0);
    const auto keys = KeyRegistry::generate(seed, owners);
    election::KeyedDigestVrf vrf(keys);
    EmptyCommitteeResult out;
    out.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto s = DigestWriter().str("ebrc/empty-committee").u64(seed).u64(t).finish();
        bool any = false;
        for (auto id : owners) {
            if (vrf.eval(keys.keys_of(id).secret_key, s).value.unit_fraction() <= omega) {
                any = true;
                break;
            }
        }
        if (!any) ++out.empty;
    }
    out.frequency = trials ? static_cast<double>(out.empty) / static_cast<double>(trials) : 0.0;
    return out;
}

void write_outputs(const std::string& dir, const MetricsReport& report) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    std::ofstream(base / "report.json") << to_json(report).dump(2) << '\n';
    std::ofstream(base / "metrics.csv") << metrics_csv({report});
    if (!report.trace_lines.empty()) {
        std::ofstream trace(base / "trace.log");
        for (const auto& line : report.trace_lines) trace << line << '\n';
    }
}

}  // namespace ebrc::harness
