#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

namespace qrs {

// Integer picoseconds. High enough precision that at most one Bell pair
// can be created per link per tick, and integer arithmetic keeps event
// ordering identical across platforms.
using SimTime = std::int64_t;
inline constexpr SimTime kPsPerSecond = 1'000'000'000'000LL;
inline constexpr SimTime kPsPerMicrosecond = 1'000'000LL;

inline constexpr SimTime seconds_to_ps(double s) {
  return static_cast<SimTime>(s * static_cast<double>(kPsPerSecond) + 0.5);
}
inline constexpr double ps_to_seconds(SimTime t) {
  return static_cast<double>(t) / static_cast<double>(kPsPerSecond);
}

using NodeAddr = std::uint32_t;
inline constexpr NodeAddr kNoNode = 0xFFFFFFFFu;

using ConnectionId = std::uint64_t;

// Globally unique name for an entangled state, minted by one of the
// nodes involved in its creation and shared by both halves.
struct ExternalName {
  NodeAddr minter = kNoNode;
  SimTime timestamp = 0;
  std::uint64_t sequence = 0;

  auto operator<=>(const ExternalName&) const = default;
  bool valid() const { return minter != kNoNode; }
  std::string str() const {
    return std::to_string(minter) + "@" + std::to_string(timestamp) + "#" +
           std::to_string(sequence);
  }
};

struct ExternalNameHash {
  std::size_t operator()(const ExternalName& n) const {
    std::size_t h = std::hash<std::uint64_t>{}(
        (static_cast<std::uint64_t>(n.minter) << 32) ^
        static_cast<std::uint64_t>(n.timestamp));
    return h ^ (std::hash<std::uint64_t>{}(n.sequence) + 0x9e3779b97f4a7c15ULL +
                (h << 6) + (h >> 2));
  }
};

// Physical location of a memory qubit; fixed for the run and private to
// the owning node.
struct PhysicalQubitAddr {
  std::uint32_t qnic_address = 0;
  std::uint32_t qubit_index = 0;
  auto operator<=>(const PhysicalQubitAddr&) const = default;
};

}  // namespace qrs
