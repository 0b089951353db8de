#pragma once

#include <cstddef>
#include <cstdint>

namespace ebrc {

// Largest f with 3f + 1 <= m.
constexpr std::size_t max_faults(std::size_t committee_size) {
    return committee_size == 0 ? 0 : (committee_size - 1) / 3;
}

constexpr std::size_t quorum_size(std::size_t f) { return 2 * f + 1; }

// Index of the master among the reputation-sorted consensus nodes.
constexpr std::size_t select_master(std::uint64_t height, std::uint64_t view, std::size_t f) {
    return static_cast<std::size_t>((height + view) % (3 * f + 1));
}

}  // namespace ebrc
