#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ebrc/crypto.hpp"

namespace ebrc::reputation {

inline constexpr double kReputationFloor = 1e-6;
inline constexpr double kInitialReputation = 0.5;
inline constexpr double kInitialGrowthRate = 0.5;

// Ledgered per-node counters feeding every reputation factor.
struct BehaviorRecord {
    NodeId node_id = 0;
    PublicKey public_key;
    double deposit = 0.0;
    std::uint64_t consensus_participations = 0;
    std::uint64_t incomplete_count = 0;
    std::uint64_t reported_evil_count = 0;
    int offline_level = 10;
    int latency_level = 10;
    int join_age_level = 2;
    std::vector<std::uint64_t> tx_size_history;
    std::vector<double> reputation_history{kInitialReputation};
    std::vector<double> growth_rate_history{kInitialGrowthRate};

    double reputation() const { return reputation_history.back(); }
    double growth_rate() const { return growth_rate_history.back(); }

    bool operator==(const BehaviorRecord&) const = default;
};

using BehaviorTable = std::map<NodeId, BehaviorRecord>;

BehaviorRecord make_record(NodeId id, const PublicKey& pk, double deposit);

struct ReputationWeights {
    double margin = 0.1;
    double incomplete = 0.3;
    double evil = 0.3;
    double activity = 0.2;
    double magnitude = 0.1;

    bool valid() const;
};

struct FactorVector {
    double margin_ratio = 0.0;
    double incomplete_rate = 0.0;
    double evil_rate = 0.0;
    double activity_rate = 0.0;
    double magnitude_factor = 0.0;
};

struct ReputationParams {
    ReputationWeights weights;
    // Use the weighted sum exactly as printed, with the incomplete and evil
    // rates added rather than complemented.
    bool literal_eq2 = false;
    // Deposit fraction removed for each confirmed report.
    double slash_fraction = 0.10;
};

// Table levels for offline time, link latency and time since joining.
int offline_level_for_hours(double hours_offline);
int latency_level_for_ms(double mean_latency_ms);
int join_age_level_for_hours(double hours_since_join);

// Largest j such that the j-th largest entry is at least j.
std::uint64_t h_index(std::span<const std::uint64_t> history);

FactorVector compute_factors(const BehaviorRecord& record, double total_deposit, std::uint64_t epoch_max_hindex);

double compute_reputation(const FactorVector& factors, const ReputationWeights& weights, bool literal_eq2 = false);

// Geometric mean growth per round between r_then and r_now.
double compute_growth_rate(double r_now, double r_then, std::uint64_t rounds_elapsed);

BehaviorRecord slash_deposit(BehaviorRecord record, double fraction);

// Clamps every deposit to cap_fraction of the network total.
void apply_deposit_cap(BehaviorTable& table, double cap_fraction);

enum class EventKind {
    Participation,    // took part in one consensus round
    Incomplete,       // failed to complete a round it was part of
    ConfirmedReport,  // a misbehaviour report against it was confirmed
    DepositSlash,     // explicit deduction by `value` (fraction)
    OfflineObserved,  // `value` hours offline this epoch
    LatencyObserved,  // `value` ms mean link latency
    JoinAgeObserved,  // `value` hours since join
    BlockProcessed,   // processed a block with `count` transactions
};

struct BehaviorEvent {
    EventKind kind = EventKind::Participation;
    NodeId node = 0;
    double value = 0.0;
    std::uint64_t count = 0;

    bool operator==(const BehaviorEvent&) const = default;
};

std::string to_string(EventKind kind);

struct UpdateResult {
    BehaviorTable table;
    std::vector<BehaviorEvent> rejected;
};

// Applies the epoch's events, then recomputes reputation and growth rate
// for every node and extends their histories.
UpdateResult update_behavior_table(const BehaviorTable& table, std::span<const BehaviorEvent> epoch_events,
                                   const ReputationParams& params = {});

}  // namespace ebrc::reputation
