#pragma once

// Connection setup data: the outbound-pass accumulator the Responder
// compiles into RuleSets, and its wire encoding (layer-k requests must
// be inspectable so tests can assert no interior addresses leak).

#include <cstdint>
#include <string>
#include <vector>

#include "qrs/wire.hpp"

namespace qrs {

enum class ConnMode : std::uint8_t { Stream, Count };

struct Requirements {
  double min_fidelity = 0.5;
  ConnMode mode = ConnMode::Stream;
  std::uint64_t target_count = 0;  // for Count mode
  bool operator==(const Requirements&) const = default;
};

// Snapshot of one quantum hop, copied from live link statistics as the
// outbound request traverses it.
struct LinkInfo {
  NodeAddr from = kNoNode;
  NodeAddr to = kNoNode;
  double seconds_per_pair = 0.0;  // at base fidelity
  double base_fidelity = 1.0;
  int available_qubits = 0;
  SimTime one_way_latency = 0;
  bool is_virtual = false;  // rewritten from a lower-layer segment
  bool pumpable = true;     // both ends can hold and purify pairs
  bool operator==(const LinkInfo&) const = default;
};

struct ConnectionRequest {
  ConnectionId connection_id = 0;
  NodeAddr initiator = kNoNode;
  NodeAddr responder = kNoNode;
  Requirements requirements;
  int layer = 0;
  std::vector<NodeAddr> path;       // layer-visible qDijkstra path
  std::vector<LinkInfo> accumulated;  // one entry per hop traversed
  bool operator==(const ConnectionRequest&) const = default;
};

inline std::vector<std::uint8_t> encode_request(const ConnectionRequest& rq) {
  wire::Writer w;
  w.u16(kWireVersion);
  w.u64(rq.connection_id);
  w.u32(rq.initiator);
  w.u32(rq.responder);
  w.f64(rq.requirements.min_fidelity);
  w.u8(static_cast<std::uint8_t>(rq.requirements.mode));
  w.u64(rq.requirements.target_count);
  w.u8(static_cast<std::uint8_t>(rq.layer));
  w.u16(static_cast<std::uint16_t>(rq.path.size()));
  for (auto n : rq.path) w.u32(n);
  w.u16(static_cast<std::uint16_t>(rq.accumulated.size()));
  for (const auto& li : rq.accumulated) {
    w.u32(li.from);
    w.u32(li.to);
    w.f64(li.seconds_per_pair);
    w.f64(li.base_fidelity);
    w.u32(static_cast<std::uint32_t>(li.available_qubits));
    w.i64(li.one_way_latency);
    w.u8(static_cast<std::uint8_t>((li.is_virtual ? 1 : 0) |
                                   (li.pumpable ? 2 : 0)));
  }
  return std::move(w).take();
}

inline ConnectionRequest decode_request(const std::vector<std::uint8_t>& b) {
  wire::Reader r(b);
  if (r.u16() != kWireVersion) r.fail("unknown request version");
  ConnectionRequest rq;
  rq.connection_id = r.u64();
  rq.initiator = r.u32();
  rq.responder = r.u32();
  rq.requirements.min_fidelity = r.f64();
  rq.requirements.mode = static_cast<ConnMode>(r.u8());
  rq.requirements.target_count = r.u64();
  rq.layer = r.u8();
  std::size_t np = r.u16();
  for (std::size_t i = 0; i < np; ++i) rq.path.push_back(r.u32());
  std::size_t na = r.u16();
  for (std::size_t i = 0; i < na; ++i) {
    LinkInfo li;
    li.from = r.u32();
    li.to = r.u32();
    li.seconds_per_pair = r.f64();
    li.base_fidelity = r.f64();
    li.available_qubits = static_cast<int>(r.u32());
    li.one_way_latency = r.i64();
    std::uint8_t flags = r.u8();
    li.is_virtual = flags & 1;
    li.pumpable = flags & 2;
    rq.accumulated.push_back(li);
  }
  return rq;
}

}  // namespace qrs
