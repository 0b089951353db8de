#include "ebrc/election.hpp"

#include <algorithm>
#include <cmath>

#include "ebrc/quorum.hpp"

namespace ebrc::election {

namespace {

constexpr char kValueTag[] = "ebrc/vrf-value";
constexpr char kProofTag[] = "ebrc/vrf-proof";

Hash256 vrf_value(const SecretKey& sk, const Hash256& seed) { return DigestWriter{}.str(kValueTag).hash(sk).hash(seed).finish(); }

Hash256 vrf_tag(const SecretKey& sk, const Hash256& seed) { return DigestWriter{}.str(kProofTag).hash(sk).hash(seed).finish(); }

// ceil() that tolerates products like 0.85 * 20 landing a hair above 17.
std::size_t ceil_count(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

template <typename Key>
std::size_t competition_rank(NodeId id, const reputation::BehaviorTable& table, Key key) {
    const double mine = key(table.at(id));
    std::size_t better = 0;
    for (const auto& [other, rec] : table)
        if (key(rec) > mine) ++better;
    return better + 1;
}

}  // namespace

VrfOutput KeyedDigestVrf::eval(const SecretKey& sk, const Hash256& seed) const {
    VrfOutput out;
    out.value = vrf_value(sk, seed);
    const auto tag = vrf_tag(sk, seed);
    out.proof.reserve(kProofSize);
    out.proof.insert(out.proof.end(), out.value.bytes.begin(), out.value.bytes.end());
    out.proof.insert(out.proof.end(), tag.bytes.begin(), tag.bytes.end());
    return out;
}

std::optional<Hash256> KeyedDigestVrf::proof_to_hash(std::span<const std::uint8_t> proof) const {
    if (proof.size() != kProofSize) return std::nullopt;
    Hash256 h;
    std::copy_n(proof.begin(), 32, h.bytes.begin());
    return h;
}

std::optional<Hash256> KeyedDigestVrf::verify(const PublicKey& pk, const Hash256& seed,
                                              std::span<const std::uint8_t> proof) const {
    const auto claimed = proof_to_hash(proof);
    if (!claimed) return std::nullopt;
    const auto sk = registry_->secret_for(pk);
    if (!sk) return std::nullopt;
    const auto expected = eval(*sk, seed);
    if (!std::equal(expected.proof.begin(), expected.proof.end(), proof.begin(), proof.end())) return std::nullopt;
    return claimed;
}

Hash256 derive_seed(const Hash256& previous_block_hash) {
    return DigestWriter{}.str("ebrc/epoch-seed").hash(previous_block_hash).finish();
}

std::string ElectionConfig::validate() const {
    if (!(omega > 0.0 && omega <= 1.0)) return "omega";
    if (target_committee_size < 4) return "target_committee_size";
    if (connect_window < 0) return "connect_window";
    if (!(consensus_percentile > 0.0 && consensus_percentile < eligibility_percentile)) return "consensus_percentile";
    if (!(eligibility_percentile <= 1.0)) return "eligibility_percentile";
    return {};
}

bool CommitteeAssignment::is_consensus(NodeId id) const {
    return std::find(consensus_nodes.begin(), consensus_nodes.end(), id) != consensus_nodes.end();
}

bool CommitteeAssignment::is_member(NodeId id) const {
    return is_consensus(id) || std::find(candidates.begin(), candidates.end(), id) != candidates.end();
}

ElectionFailed::ElectionFailed(std::size_t v, std::size_t r)
    : ProtocolError("election failed: " + std::to_string(v) + " verified selectees, need " + std::to_string(r)),
      verified(v),
      required(r) {}

std::size_t rank_limit(std::size_t n, double percentile) {
    // The bottom (1 - p) share is excluded, rounded down, so small networks
    // do not lose members to fractional cut-offs.
    const auto excluded = static_cast<std::size_t>(std::floor((1.0 - percentile) * static_cast<double>(n) + 1e-9));
    return n - std::min(n, excluded);
}

std::size_t reputation_rank(NodeId id, const reputation::BehaviorTable& table) {
    return competition_rank(id, table, [](const reputation::BehaviorRecord& r) { return r.reputation(); });
}

std::size_t growth_rank(NodeId id, const reputation::BehaviorTable& table) {
    return competition_rank(id, table, [](const reputation::BehaviorRecord& r) { return r.growth_rate(); });
}

bool is_eligible(NodeId id, const reputation::BehaviorTable& table, double eligibility_percentile) {
    const auto limit = rank_limit(table.size(), eligibility_percentile);
    return reputation_rank(id, table) <= limit && growth_rank(id, table) <= limit;
}

CommitteeAssignment form_committee(const reputation::BehaviorTable& table, const ElectionConfig& config,
                                   const Hash256& seed, const KeyRegistry& keys, const Vrf& vrf, std::uint64_t epoch,
                                   std::uint64_t height, const ElectionHooks& hooks) {
    CommitteeAssignment out;
    out.epoch = epoch;
    out.seed = seed;

    struct Selectee {
        NodeId id;
        double reputation;
        Hash256 value;
        bool late;
    };
    std::vector<Selectee> verified;

    for (const auto& [id, rec] : table) {
        if (!is_eligible(id, table, config.eligibility_percentile)) continue;
        auto announced = vrf.eval(keys.keys_of(id).secret_key, seed);
        if (announced.value.unit_fraction() > config.omega) continue;
        if (hooks.tamper) hooks.tamper(id, announced);

        // Peers check the announcement against the sender's public key.
        const auto recovered = vrf.verify(keys.public_key(id), seed, announced.proof);
        if (!recovered || recovered->unit_fraction() > config.omega) {
            out.reports.push_back(id);
            continue;
        }
        const bool late = hooks.connect_delay && hooks.connect_delay(id) > config.connect_window;
        verified.push_back({id, rec.reputation(), *recovered, late});
        out.vrf_outputs.emplace(id, std::move(announced));
    }

    if (verified.size() < config.target_committee_size)
        throw ElectionFailed(verified.size(), config.target_committee_size);

    // Reputation descending; equal reputations are ordered by VRF value so
    // no node id is systematically favoured.
    std::sort(verified.begin(), verified.end(), [](const Selectee& a, const Selectee& b) {
        if (a.late != b.late) return !a.late;
        if (a.reputation != b.reputation) return a.reputation > b.reputation;
        if (a.value != b.value) return a.value < b.value;
        return a.id < b.id;
    });

    const auto k = verified.size();
    const auto on_time = static_cast<std::size_t>(std::count_if(verified.begin(), verified.end(), [](auto& s) { return !s.late; }));
    // Late connectors only fill the consensus set when too few arrived in time.
    const auto usable = std::max(on_time, config.target_committee_size);
    auto consensus_count = std::max(config.target_committee_size, ceil_count(config.consensus_percentile * k));
    consensus_count = std::min(consensus_count, usable);
    auto candidate_end = std::max(consensus_count, ceil_count(config.eligibility_percentile * k));
    candidate_end = std::min(candidate_end, std::max(on_time, consensus_count));

    for (std::size_t i = 0; i < k; ++i) {
        if (i < consensus_count)
            out.consensus_nodes.push_back(verified[i].id);
        else if (i < candidate_end)
            out.candidates.push_back(verified[i].id);
        else
            out.spares.push_back(verified[i].id);
    }
    out.f = max_faults(out.consensus_nodes.size());
    out.master_index = select_master(height, 0, out.f);
    return out;
}

RetriedElection form_committee_with_retry(const reputation::BehaviorTable& table, const ElectionConfig& config,
                                          const Hash256& seed, const KeyRegistry& keys, const Vrf& vrf,
                                          std::uint64_t epoch, std::uint64_t height, const ElectionHooks& hooks) {
    Hash256 current = seed;
    for (int attempt = 0;; ++attempt) {
        try {
            return {form_committee(table, config, current, keys, vrf, epoch, height, hooks), attempt};
        } catch (const ElectionFailed&) {
            if (attempt >= kMaxElectionRetries) throw;
            current = derive_seed(current);
        }
    }
}

}  // namespace ebrc::election
