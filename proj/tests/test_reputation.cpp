#include "doctest.h"

#include <cmath>
#include <vector>

#include "ebrc/reputation.hpp"

using namespace ebrc;
using namespace ebrc::reputation;

namespace {

// Largest j with at least j entries >= j, by direct counting.
std::uint64_t brute_h(const std::vector<std::uint64_t>& v) {
    std::uint64_t best = 0;
    for (std::uint64_t j = 0; j <= v.size(); ++j) {
        std::uint64_t at_least = 0;
        for (auto x : v)
            if (x >= j) ++at_least;
        if (at_least >= j) best = j;
    }
    return best;
}

// Weighted sum over the completion and honesty complements.
double oracle_r(double d, double tau, double psi, double phi, double rho) {
    const double r = 0.1 * d + 0.3 * (1 - tau) + 0.3 * (1 - psi) + 0.2 * phi + 0.1 * rho;
    return std::min(1.0, std::max(1e-6, r));
}

BehaviorTable four_nodes() {
    BehaviorTable t;
    for (NodeId id = 0; id < 4; ++id) t[id] = make_record(id, Hash256{}, 100.0);
    return t;
}

}  // namespace

TEST_CASE("h_index spot values") {
    CHECK(h_index(std::vector<std::uint64_t>{}) == 0);
    CHECK(h_index(std::vector<std::uint64_t>{10, 8, 5, 4, 3}) == 4);
    CHECK(h_index(std::vector<std::uint64_t>{3, 0, 6, 1, 5}) == 3);
    CHECK(h_index(std::vector<std::uint64_t>{5, 4, 3}) == 3);
}

TEST_CASE("h_index matches brute force on every short list") {
    std::size_t checked = 0;
    for (std::size_t len = 0; len <= 8; ++len) {
        std::vector<std::uint64_t> v(len, 0);
        while (true) {
            REQUIRE(h_index(v) == brute_h(v));
            ++checked;
            std::size_t i = 0;
            while (i < len && v[i] == 5) v[i++] = 0;
            if (i == len) break;
            ++v[i];
        }
    }
    // sum of 6^len for len 0..8
    CHECK(checked == 2015539);
}

TEST_CASE("factor vector hand example") {
    auto rec = make_record(1, Hash256{}, 10.0);
    rec.consensus_participations = 20;
    rec.incomplete_count = 2;
    rec.reported_evil_count = 1;
    rec.offline_level = 10;
    rec.latency_level = 10;
    rec.join_age_level = 10;
    rec.tx_size_history = {5, 4, 3};
    const auto f = compute_factors(rec, 100.0, 3);
    CHECK(f.margin_ratio == doctest::Approx(0.1));
    CHECK(f.incomplete_rate == doctest::Approx(0.1));
    CHECK(f.evil_rate == doctest::Approx(0.05));
    CHECK(f.activity_rate == doctest::Approx(1.0));
    CHECK(f.magnitude_factor == doctest::Approx(1.0));
    CHECK(compute_reputation(f, {}) == doctest::Approx(0.865).epsilon(1e-12));

    rec.offline_level = 2;
    rec.latency_level = 2;
    CHECK(compute_factors(rec, 100.0, 3).activity_rate == doctest::Approx(0.2));
}

TEST_CASE("fresh node has zero failure rates") {
    const auto f = compute_factors(make_record(0, Hash256{}, 0.0), 0.0, 0);
    CHECK(f.incomplete_rate == 0.0);
    CHECK(f.evil_rate == 0.0);
    CHECK(f.margin_ratio == 0.0);
    CHECK(f.magnitude_factor == 0.0);
}

TEST_CASE("reputation extremes") {
    CHECK(compute_reputation({1, 0, 0, 1, 1}, {}) == 1.0);
    CHECK(compute_reputation({0, 1, 1, 0, 0}, {}) == kReputationFloor);
    // The literal form adds the failure rates, so a node that always fails
    // scores higher than one that never does.
    CHECK(compute_reputation({0, 1, 1, 0, 0}, {}, true) > compute_reputation({0, 0, 0, 0, 0}, {}, true));
}

TEST_CASE("reputation agrees with the weighted-sum oracle on a grid") {
    const double grid[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (double d : grid)
        for (double tau : grid)
            for (double psi : grid)
                for (double phi : grid)
                    for (double rho : grid)
                        REQUIRE(compute_reputation({d, tau, psi, phi, rho}, {}) ==
                                doctest::Approx(oracle_r(d, tau, psi, phi, rho)).epsilon(1e-12));
}

TEST_CASE("reputation is monotone in each factor") {
    const double grid[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    for (double base : grid) {
        for (std::size_t i = 0; i + 1 < std::size(grid); ++i) {
            const double lo = grid[i], hi = grid[i + 1];
            CHECK(compute_reputation({lo, base, base, base, base}, {}) <= compute_reputation({hi, base, base, base, base}, {}));
            CHECK(compute_reputation({base, lo, base, base, base}, {}) >= compute_reputation({base, hi, base, base, base}, {}));
            CHECK(compute_reputation({base, base, lo, base, base}, {}) >= compute_reputation({base, base, hi, base, base}, {}));
            CHECK(compute_reputation({base, base, base, lo, base}, {}) <= compute_reputation({base, base, base, hi, base}, {}));
            CHECK(compute_reputation({base, base, base, base, lo}, {}) <= compute_reputation({base, base, base, base, hi}, {}));
        }
    }
}

TEST_CASE("growth rate") {
    CHECK(std::abs(compute_growth_rate(0.72, 0.5, 3) - 0.2) <= 1e-12);
    CHECK(compute_growth_rate(0.5, 0.72, 3) == doctest::Approx(std::sqrt(0.5 / 0.72) - 1.0).epsilon(1e-12));
    CHECK(compute_growth_rate(0.5, 0.72, 3) == doctest::Approx(-0.1667).epsilon(1e-3));
    CHECK(compute_growth_rate(0.6, 0.6, 5) == 0.0);
    CHECK(compute_growth_rate(0.9, 0.5, 1) == kInitialGrowthRate);
}

TEST_CASE("weights validity") {
    CHECK(ReputationWeights{}.valid());
    CHECK_FALSE(ReputationWeights{0.5, 0.5, 0.5, 0.0, 0.0}.valid());
    CHECK_FALSE(ReputationWeights{-0.1, 0.4, 0.3, 0.3, 0.1}.valid());
}

TEST_CASE("level tables") {
    CHECK(offline_level_for_hours(0) == 10);
    CHECK(offline_level_for_hours(1) == 8);
    CHECK(offline_level_for_hours(10) == 6);
    CHECK(offline_level_for_hours(48) == 4);
    CHECK(offline_level_for_hours(100) == 2);
    CHECK(latency_level_for_ms(11) == 10);
    CHECK(latency_level_for_ms(40) == 8);
    CHECK(latency_level_for_ms(60) == 6);
    CHECK(latency_level_for_ms(90) == 4);
    CHECK(latency_level_for_ms(150) == 2);
    CHECK(join_age_level_for_hours(5) == 2);
    CHECK(join_age_level_for_hours(12) == 2);
    CHECK(join_age_level_for_hours(20) == 4);
    CHECK(join_age_level_for_hours(30) == 8);
    CHECK(join_age_level_for_hours(80) == 9);
    CHECK(join_age_level_for_hours(200) == 10);
}

TEST_CASE("slash deposit") {
    auto rec = make_record(0, Hash256{}, 100.0);
    CHECK(slash_deposit(rec, 0.0).deposit == 100.0);
    CHECK(slash_deposit(rec, 0.1).deposit == doctest::Approx(90.0));
    CHECK(slash_deposit(make_record(0, Hash256{}, 0.0), 0.5).deposit == 0.0);
}

TEST_CASE("deposit cap clamps whales") {
    BehaviorTable t = four_nodes();
    t[0].deposit = 700.0;  // total 1000, cap 250
    apply_deposit_cap(t, 0.25);
    CHECK(t[0].deposit == doctest::Approx(250.0));
    CHECK(t[1].deposit == doctest::Approx(100.0));
}

TEST_CASE("empty update only extends histories") {
    const auto t = four_nodes();
    const auto once = update_behavior_table(t, {}).table;
    const auto twice = update_behavior_table(once, {}).table;
    for (const auto& [id, rec] : twice) {
        CHECK(rec.reputation_history.size() == 3);
        CHECK(rec.reputation_history[1] == rec.reputation_history[2]);
        CHECK(rec.deposit == t.at(id).deposit);
        CHECK(rec.consensus_participations == 0);
    }
}

TEST_CASE("confirmed report lowers reputation") {
    auto t = four_nodes();
    std::vector<BehaviorEvent> warmup;
    for (NodeId id = 0; id < 4; ++id)
        for (int i = 0; i < 5; ++i) warmup.push_back({EventKind::Participation, id, 0.0, 0});
    t = update_behavior_table(t, warmup).table;
    const double before = t[3].reputation();

    const std::vector<BehaviorEvent> ev{{EventKind::ConfirmedReport, 3, 0.0, 0}};
    const auto after = update_behavior_table(t, ev).table;
    CHECK(after.at(3).reported_evil_count == 1);
    CHECK(after.at(3).reputation() < before);
    CHECK(after.at(3).deposit == doctest::Approx(90.0));
}

TEST_CASE("explicit slash recomputes the margin against the reduced total") {
    const auto t = four_nodes();
    const std::vector<BehaviorEvent> ev{{EventKind::DepositSlash, 3, 0.1, 0}};
    const auto after = update_behavior_table(t, ev).table;
    CHECK(after.at(3).deposit == doctest::Approx(90.0));
    const auto f = compute_factors(after.at(3), 390.0, 0);
    CHECK(f.margin_ratio == doctest::Approx(90.0 / 390.0));
    CHECK(after.at(3).reputation() == doctest::Approx(compute_reputation(f, {})));
}

TEST_CASE("events for unknown nodes are rejected") {
    const auto t = four_nodes();
    const std::vector<BehaviorEvent> ev{{EventKind::Participation, 99, 0.0, 0}};
    const auto out = update_behavior_table(t, ev);
    REQUIRE(out.rejected.size() == 1);
    CHECK(out.rejected[0].node == 99);
    CHECK(out.table.size() == 4);
}

TEST_CASE("counts never exceed participations") {
    auto t = four_nodes();
    const std::vector<BehaviorEvent> ev{{EventKind::Participation, 0, 0, 0},
                                        {EventKind::Incomplete, 0, 0, 0},
                                        {EventKind::Incomplete, 0, 0, 0},
                                        {EventKind::ConfirmedReport, 0, 0, 0},
                                        {EventKind::ConfirmedReport, 0, 0, 0}};
    const auto after = update_behavior_table(t, ev).table.at(0);
    CHECK(after.incomplete_count == 1);
    CHECK(after.reported_evil_count == 1);
    const auto f = compute_factors(after, 400.0, 0);
    CHECK(f.incomplete_rate <= 1.0);
    CHECK(f.evil_rate <= 1.0);
}
