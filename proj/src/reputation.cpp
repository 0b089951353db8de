#include "ebrc/reputation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>

namespace ebrc::reputation {

BehaviorRecord make_record(NodeId id, const PublicKey& pk, double deposit) {
    BehaviorRecord r;
    r.node_id = id;
    r.public_key = pk;
    r.deposit = std::max(0.0, deposit);
    return r;
}

bool ReputationWeights::valid() const {
    const double parts[] = {margin, incomplete, evil, activity, magnitude};
    double sum = 0.0;
    for (double p : parts) {
        if (!(p >= 0.0)) return false;
        sum += p;
    }
    return std::abs(sum - 1.0) < 1e-9;
}

int offline_level_for_hours(double h) {
    if (h <= 0.5) return 10;
    if (h <= 2.0) return 8;
    if (h <= 24.0) return 6;
    if (h <= 72.0) return 4;
    return 2;
}

int latency_level_for_ms(double ms) {
    if (ms <= 30.0) return 10;
    if (ms <= 50.0) return 8;
    if (ms <= 80.0) return 6;
    if (ms <= 100.0) return 4;
    return 2;
}

int join_age_level_for_hours(double h) {
    if (h > 96.0) return 10;
    if (h > 72.0) return 9;
    if (h > 24.0) return 8;
    if (h > 12.0) return 4;
    return 2;
}

std::uint64_t h_index(std::span<const std::uint64_t> history) {
    std::vector<std::uint64_t> sorted(history.begin(), history.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>{});
    std::uint64_t h = 0;
    for (std::size_t j = 1; j <= sorted.size(); ++j) {
        if (sorted[j - 1] >= j)
            h = j;
        else
            break;
    }
    return h;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return std::clamp(static_cast<double>(num) / static_cast<double>(std::max<std::uint64_t>(1, den)), 0.0, 1.0);
}

}  // namespace

FactorVector compute_factors(const BehaviorRecord& record, double total_deposit, std::uint64_t epoch_max_hindex) {
    FactorVector f;
    f.margin_ratio = total_deposit > 0.0 ? std::clamp(record.deposit / total_deposit, 0.0, 1.0) : 0.0;
    f.incomplete_rate = ratio(record.incomplete_count, record.consensus_participations);
    f.evil_rate = ratio(record.reported_evil_count, record.consensus_participations);
    const double join = std::max(1, record.join_age_level);
    f.activity_rate = std::clamp((record.offline_level + record.latency_level) / (2.0 * join), 0.0, 1.0);
    f.magnitude_factor = ratio(h_index(record.tx_size_history), epoch_max_hindex);
    return f;
}

double compute_reputation(const FactorVector& f, const ReputationWeights& w, bool literal_eq2) {
    const double incomplete_term = literal_eq2 ? f.incomplete_rate : 1.0 - f.incomplete_rate;
    const double evil_term = literal_eq2 ? f.evil_rate : 1.0 - f.evil_rate;
    // Compensated sum: plain left-to-right addition of the default weights
    // gives 0.9999999999999999 for a perfect node.
    const double terms[] = {w.margin * f.margin_ratio, w.incomplete * incomplete_term, w.evil * evil_term,
                            w.activity * f.activity_rate, w.magnitude * f.magnitude_factor};
    double sum = 0.0, carry = 0.0;
    for (double t : terms) {
        const double next = sum + t;
        carry += std::abs(sum) >= std::abs(t) ? (sum - next) + t : (t - next) + sum;
        sum = next;
    }
    return std::clamp(sum + carry, kReputationFloor, 1.0);
}

double compute_growth_rate(double r_now, double r_then, std::uint64_t rounds_elapsed) {
    if (rounds_elapsed < 2) return kInitialGrowthRate;
    if (r_now == r_then) return 0.0;
    return std::pow(r_now / r_then, 1.0 / static_cast<double>(rounds_elapsed - 1)) - 1.0;
}

BehaviorRecord slash_deposit(BehaviorRecord record, double fraction) {
    record.deposit = std::max(0.0, record.deposit * (1.0 - std::clamp(fraction, 0.0, 1.0)));
    return record;
}

void apply_deposit_cap(BehaviorTable& table, double cap_fraction) {
    double total = 0.0;
    for (const auto& [id, rec] : table) total += rec.deposit;
    const double cap = cap_fraction * total;
    for (auto& [id, rec] : table) rec.deposit = std::min(rec.deposit, cap);
}

std::string to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Participation: return "participation";
        case EventKind::Incomplete: return "incomplete";
        case EventKind::ConfirmedReport: return "confirmed_report";
        case EventKind::DepositSlash: return "deposit_slash";
        case EventKind::OfflineObserved: return "offline_observed";
        case EventKind::LatencyObserved: return "latency_observed";
        case EventKind::JoinAgeObserved: return "join_age_observed";
        case EventKind::BlockProcessed: return "block_processed";
    }
    return "unknown";
}

UpdateResult update_behavior_table(const BehaviorTable& table, std::span<const BehaviorEvent> epoch_events,
                                   const ReputationParams& params) {
    UpdateResult out{table, {}};
    auto& next = out.table;

    for (const auto& ev : epoch_events) {
        auto it = next.find(ev.node);
        if (it == next.end()) {
            std::cerr << "behavior event " << to_string(ev.kind) << " for unknown node " << ev.node << " rejected\n";
            out.rejected.push_back(ev);
            continue;
        }
        auto& rec = it->second;
        switch (ev.kind) {
            case EventKind::Participation: ++rec.consensus_participations; break;
            case EventKind::Incomplete:
                rec.incomplete_count = std::min(rec.incomplete_count + 1, rec.consensus_participations);
                break;
            case EventKind::ConfirmedReport:
                rec.reported_evil_count = std::min(rec.reported_evil_count + 1, rec.consensus_participations);
                if (params.slash_fraction > 0.0) rec = slash_deposit(rec, params.slash_fraction);
                break;
            case EventKind::DepositSlash: rec = slash_deposit(rec, ev.value); break;
            case EventKind::OfflineObserved: rec.offline_level = offline_level_for_hours(ev.value); break;
            case EventKind::LatencyObserved: rec.latency_level = latency_level_for_ms(ev.value); break;
            case EventKind::JoinAgeObserved: rec.join_age_level = join_age_level_for_hours(ev.value); break;
            case EventKind::BlockProcessed: rec.tx_size_history.push_back(ev.count); break;
        }
    }

    double total_deposit = 0.0;
    std::uint64_t max_h = 0;
    for (const auto& [id, rec] : next) {
        total_deposit += rec.deposit;
        max_h = std::max(max_h, h_index(rec.tx_size_history));
    }

    for (auto& [id, rec] : next) {
        const auto factors = compute_factors(rec, total_deposit, max_h);
        const double r = compute_reputation(factors, params.weights, params.literal_eq2);
        rec.reputation_history.push_back(r);
        const auto t = rec.reputation_history.size();
        rec.growth_rate_history.push_back(compute_growth_rate(r, rec.reputation_history.front(), t));
    }
    return out;
}

}  // namespace ebrc::reputation
