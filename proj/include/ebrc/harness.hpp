#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ebrc/consensus.hpp"
#include "ebrc/election.hpp"
#include "ebrc/reputation.hpp"
#include "ebrc/simnet.hpp"

namespace ebrc::harness {

inline constexpr int kReportSchemaVersion = 1;

enum class CommitteeMode { Elected, All };

struct ByzantineConfig {
    simnet::Behavior behavior = simnet::Behavior::Honest;
    std::vector<NodeId> nodes;
    // Picked from the seed when `nodes` is empty; "f" in config files means
    // floor((n-1)/3).
    std::size_t count = 0;
    std::uint64_t first_epoch = 0;
    std::uint64_t last_epoch = std::numeric_limits<std::uint64_t>::max();
    double lazy_factor = 4.0;
    bool allow_over_threshold = false;
};

struct ScriptedExit {
    std::uint64_t round = 0;        // global round index, 0-based
    std::optional<NodeId> node;     // default: lowest-ranked non-master consensus node
};

struct ScenarioConfig {
    std::string name = "scenario";
    consensus::Protocol protocol = consensus::Protocol::Ebrc;
    std::size_t node_count = 4;
    CommitteeMode committee = CommitteeMode::Elected;
    election::ElectionConfig election;
    reputation::ReputationParams reputation;
    double deposit_cap = 0.25;
    double default_deposit = 100.0;
    std::map<NodeId, double> deposits;
    std::uint64_t epochs = 1;
    std::uint64_t rounds_per_epoch = 20;
    std::size_t block_tx_cap = 15;
    std::size_t client_load = 15;
    simnet::PayloadSizes payload;
    SimTime batch_wait = millis(50);
    SimTime view_change_timeout = millis(200);
    bool quick_skip = true;
    SimTime round_time_limit = millis(5000);
    double hours_per_round = 1.0;
    simnet::NetworkModel network;
    ByzantineConfig byzantine;
    std::vector<ScriptedExit> djep;
    std::uint64_t seed = 1;
};

class ConfigError : public std::runtime_error {
  public:
    ConfigError(const std::string& path, const std::string& message)
        : std::runtime_error(path + ": " + message), path(path) {}
    std::string path;
};

// Fail-closed: unknown fields and out-of-range values raise ConfigError
// naming the offending field path.
ScenarioConfig parse_scenario(const nlohmann::json& doc);
ScenarioConfig load_scenario(const std::string& file);
void validate(const ScenarioConfig& config);
nlohmann::json to_json(const ScenarioConfig& config);

struct RoundRecord {
    std::uint64_t round = 0;
    std::uint64_t epoch = 0;
    std::uint64_t height = 0;
    bool committed = false;
    SimTime started = 0;
    SimTime finished = 0;
    SimTime accepted = 0;
    double latency_ms = 0.0;  // mean submit-to-accept over the block's transactions
    std::size_t txs = 0;
    std::uint32_t view_changes = 0;
    std::size_t committee_size = 0;
    std::size_t protocol_messages = 0;
    std::size_t membership_messages = 0;
};

struct MembershipLogEntry {
    std::uint64_t round = 0;
    std::string kind;
    NodeId node = 0;
    std::uint64_t height = 0;
};

struct DjepMeasure {
    std::uint64_t round = 0;
    NodeId node = 0;
    bool promotion = false;
    bool finalized = false;
    std::size_t membership_messages = 0;
    SimTime requested_at = 0;
    SimTime finalized_at = 0;
    double delay_ms = 0.0;
};

struct LedgerEntry {
    std::uint64_t height = 0;
    std::uint64_t view = 0;
    Hash256 digest;
    std::size_t txs = 0;
    std::vector<NodeId> committers;
};

struct MessageCounts {
    std::size_t total = 0;
    std::map<std::string, std::size_t> by_tag;
    std::map<std::uint64_t, std::size_t> by_round;
    std::map<std::uint64_t, std::map<std::string, std::size_t>> by_round_tag;
};

MessageCounts count_messages(const std::vector<simnet::TraceRecord>& trace);

// Submit-to-complete time in simulated milliseconds.
double compute_latency(SimTime submit, SimTime complete);
// Committed transactions per simulated second; nullopt for an empty interval.
std::optional<double> compute_tps(std::size_t committed_tx, double interval_seconds);

struct MetricsReport {
    std::string name;
    consensus::Protocol protocol = consensus::Protocol::Ebrc;
    std::size_t node_count = 0;
    std::uint64_t seed = 0;
    std::vector<NodeId> byzantine_nodes;
    std::vector<RoundRecord> rounds;
    std::vector<double> latencies_ms;
    double mean_latency_ms = 0.0;
    double p50_latency_ms = 0.0;
    double p95_latency_ms = 0.0;
    std::optional<double> tps;
    std::size_t committed_tx = 0;
    double simulated_seconds = 0.0;
    MessageCounts messages;
    std::size_t protocol_messages = 0;
    std::map<NodeId, std::size_t> election_counts;
    std::size_t election_retries = 0;
    std::size_t committed_rounds = 0;
    std::size_t aborted_rounds = 0;
    std::uint32_t max_view_changes = 0;
    std::size_t view_change_messages = 0;
    bool liveness_ok = true;
    std::vector<MembershipLogEntry> membership;
    std::vector<DjepMeasure> djep;
    std::vector<LedgerEntry> ledger;
    bool safety_violation = false;
    std::string safety_detail;
    std::string error;
    std::vector<std::string> trace_lines;
};

MetricsReport run_scenario(const ScenarioConfig& config, bool keep_trace = false);

nlohmann::json to_json(const MetricsReport& report);
// One row per (protocol, n, seed, metric).
std::vector<std::vector<std::string>> metric_rows(const MetricsReport& report);
std::string metrics_csv(const std::vector<MetricsReport>& reports);

// Side-by-side summary with the qualitative protocol matrix.
nlohmann::json compare(const std::vector<MetricsReport>& reports);

struct FairnessStats {
    double chi_square = 0.0;
    double p_value = 1.0;
    std::size_t min_count = 0;
    std::size_t max_count = 0;
    double mean = 0.0;
};

FairnessStats fairness_stats(const std::vector<std::size_t>& counts);

struct FairnessReport {
    std::size_t nodes = 0;
    std::size_t epochs = 0;
    bool poison_odd = false;
    std::vector<std::size_t> counts;  // consensus-node elections per node id
    FairnessStats stats;
    double odd_mean = 0.0;
    double even_mean = 0.0;
    std::size_t retries = 0;
    std::size_t failed_epochs = 0;
};

// Pure election loop over equal-reputation nodes with chained seeds. With
// poison_odd, odd ids carry confirmed reports pushing their evil rate to at
// least 0.3 before the first epoch.
FairnessReport run_fairness(std::size_t nodes, std::size_t epochs, bool poison_odd, std::uint64_t seed = 1,
                            const election::ElectionConfig& config = {});
nlohmann::json to_json(const FairnessReport& report);

struct EmptyCommitteeResult {
    std::size_t trials = 0;
    std::size_t empty = 0;
    double frequency = 0.0;
};

// Fraction of seeds for which no node self-selects.
EmptyCommitteeResult empty_committee_frequency(std::size_t nodes, double omega, std::size_t trials,
                                               std::uint64_t seed = 1);

// Writes report.json, metrics.csv and, when present, trace.log.
void write_outputs(const std::string& dir, const MetricsReport& report);

}  // namespace ebrc::harness
