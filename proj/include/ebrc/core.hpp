#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace ebrc {

using NodeId = std::uint32_t;

// Clients live in their own id range so they never collide with replicas.
inline constexpr NodeId kClientIdBase = 1'000'000;

// Simulated time in integer microseconds.
using SimTime = std::int64_t;

inline constexpr SimTime kMicrosPerMilli = 1'000;
inline constexpr SimTime kMicrosPerSecond = 1'000'000;

constexpr SimTime millis(std::int64_t ms) { return ms * kMicrosPerMilli; }
constexpr double to_millis(SimTime t) { return static_cast<double>(t) / kMicrosPerMilli; }

// 256-bit value: digests, seeds, VRF outputs.
struct Hash256 {
    std::array<std::uint8_t, 32> bytes{};

    auto operator<=>(const Hash256&) const = default;

    bool is_zero() const {
        for (auto b : bytes)
            if (b != 0) return false;
        return true;
    }

    // Value interpreted as a big-endian integer, divided by 2^256.
    double unit_fraction() const;

    std::string hex() const;
    std::string short_hex(std::size_t nbytes = 4) const;
    static Hash256 from_hex(const std::string& hex);
};

class ProtocolError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace ebrc
