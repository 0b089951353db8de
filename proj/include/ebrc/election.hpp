#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "ebrc/crypto.hpp"
#include "ebrc/reputation.hpp"

namespace ebrc::election {

struct VrfOutput {
    Hash256 value;
    std::vector<std::uint8_t> proof;

    bool operator==(const VrfOutput&) const = default;
};

// Pluggable verifiable random function.
class Vrf {
  public:
    virtual ~Vrf() = default;
    virtual VrfOutput eval(const SecretKey& sk, const Hash256& seed) const = 0;
    // Recovered value on success, nullopt when the proof does not verify.
    virtual std::optional<Hash256> verify(const PublicKey& pk, const Hash256& seed,
                                          std::span<const std::uint8_t> proof) const = 0;
    virtual std::optional<Hash256> proof_to_hash(std::span<const std::uint8_t> proof) const = 0;
};

// value = H(sk || seed); proof = value || H(sk || seed || tag). Verification
// asks the key registry oracle for the secret behind pk and recomputes.
class KeyedDigestVrf final : public Vrf {
  public:
    explicit KeyedDigestVrf(const KeyRegistry& registry) : registry_(&registry) {}

    VrfOutput eval(const SecretKey& sk, const Hash256& seed) const override;
    std::optional<Hash256> verify(const PublicKey& pk, const Hash256& seed,
                                  std::span<const std::uint8_t> proof) const override;
    std::optional<Hash256> proof_to_hash(std::span<const std::uint8_t> proof) const override;

    static constexpr std::size_t kProofSize = 64;

  private:
    const KeyRegistry* registry_;
};

Hash256 derive_seed(const Hash256& previous_block_hash);

struct ElectionConfig {
    double omega = 0.4;
    // Minimum verified selectees; also the floor on the consensus set size.
    std::size_t target_committee_size = 4;
    SimTime connect_window = millis(200);
    double eligibility_percentile = 0.85;
    double consensus_percentile = 0.50;

    // Empty string when valid, otherwise the offending field.
    std::string validate() const;
};

struct CommitteeAssignment {
    std::uint64_t epoch = 0;
    Hash256 seed;
    std::vector<NodeId> consensus_nodes;
    std::vector<NodeId> candidates;
    std::vector<NodeId> spares;
    std::size_t f = 0;
    std::size_t master_index = 0;
    std::map<NodeId, VrfOutput> vrf_outputs;
    // Selectees whose proofs failed peer verification.
    std::vector<NodeId> reports;

    std::size_t size() const { return consensus_nodes.size(); }
    bool is_consensus(NodeId id) const;
    bool is_member(NodeId id) const;
};

class ElectionFailed : public ProtocolError {
  public:
    ElectionFailed(std::size_t verified, std::size_t required);
    std::size_t verified;
    std::size_t required;
};

// Number of top ranks that count as "within the top percentile" of n.
std::size_t rank_limit(std::size_t n, double percentile);

// Competition rank (1-based, ties share the best rank) by reputation and
// by growth rate over all nodes in the table.
std::size_t reputation_rank(NodeId id, const reputation::BehaviorTable& table);
std::size_t growth_rank(NodeId id, const reputation::BehaviorTable& table);

bool is_eligible(NodeId id, const reputation::BehaviorTable& table, double eligibility_percentile);

struct ElectionHooks {
    // Lets a test or Byzantine profile tamper with a selectee's announcement.
    std::function<void(NodeId, VrfOutput&)> tamper;
    // Time for a selectee's connect request to reach its peers.
    std::function<SimTime(NodeId)> connect_delay;
};

CommitteeAssignment form_committee(const reputation::BehaviorTable& table, const ElectionConfig& config,
                                   const Hash256& seed, const KeyRegistry& keys, const Vrf& vrf,
                                   std::uint64_t epoch = 0, std::uint64_t height = 0, const ElectionHooks& hooks = {});

inline constexpr int kMaxElectionRetries = 16;

struct RetriedElection {
    CommitteeAssignment committee;
    int retries = 0;
};

// Re-derives the seed from itself after every ElectionFailed, up to
// kMaxElectionRetries times, then rethrows.
RetriedElection form_committee_with_retry(const reputation::BehaviorTable& table, const ElectionConfig& config,
                                          const Hash256& seed, const KeyRegistry& keys, const Vrf& vrf,
                                          std::uint64_t epoch = 0, std::uint64_t height = 0,
                                          const ElectionHooks& hooks = {});

}  // namespace ebrc::election
