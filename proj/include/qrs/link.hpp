#pragma once

// Physical link parameters and the loss model: detector efficiency and
// fiber attenuation only, with the 50% linear-optics ceiling for
// midpoint Bell-state analysis.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include "qrs/core.hpp"
#include "qrs/quantum.hpp"

namespace qrs {

enum class NodeType : std::uint8_t {
  COMP,
  MEAS,
  SNSR,
  REP1,
  REP2,  // accepted in topologies but inert (no 2G behavior)
  RTR,
  BSA,
  EPPS,
  OSW,
};

inline const char* to_string(NodeType t) {
  switch (t) {
    case NodeType::COMP: return "COMP";
    case NodeType::MEAS: return "MEAS";
    case NodeType::SNSR: return "SNSR";
    case NodeType::REP1: return "REP1";
    case NodeType::REP2: return "REP2";
    case NodeType::RTR: return "RTR";
    case NodeType::BSA: return "BSA";
    case NodeType::EPPS: return "EPPS";
    case NodeType::OSW: return "OSW";
  }
  return "?";
}

inline bool parse_node_type(const std::string& s, NodeType& out) {
  for (auto t : {NodeType::COMP, NodeType::MEAS, NodeType::SNSR,
                 NodeType::REP1, NodeType::REP2, NodeType::RTR, NodeType::BSA,
                 NodeType::EPPS, NodeType::OSW}) {
    if (s == to_string(t)) {
      out = t;
      return true;
    }
  }
  return false;
}

struct NodeCapability {
  NodeType node_type = NodeType::COMP;
  int memory_qubits = 8;
  double t_mem_seconds = std::numeric_limits<double>::infinity();
  bool single_active_interface = false;

  bool is_end_node() const {
    return node_type == NodeType::COMP || node_type == NodeType::MEAS ||
           node_type == NodeType::SNSR;
  }
  bool has_memory() const { return node_type != NodeType::MEAS; }
  double decay_rate_per_ps() const {
    if (!std::isfinite(t_mem_seconds) || !has_memory()) return 0.0;
    return 1.0 / (t_mem_seconds * static_cast<double>(kPsPerSecond));
  }
};

enum class LinkArch : std::uint8_t {
  Direct,        // memory-to-memory, one photon end to end
  BsaMidpoint,   // photons meet a Bell state analyzer halfway
  EppsMidpoint,  // entangled photon pair source; same success chain
};

struct LinkSpec {
  NodeAddr node_a = kNoNode;
  NodeAddr node_b = kNoNode;
  LinkArch architecture = LinkArch::Direct;
  NodeAddr midpoint = kNoNode;  // BSA/EPPS node for midpoint links
  double length_km = 1.0;
  double attenuation_db_per_km = 0.2;
  double attempt_rate_hz = 1000.0;
  double detector_efficiency = 1.0;
  double base_fidelity = 1.0;
  int qubit_capacity = 4;          // memory qubits usable per end
  double switching_loss_db = 0.0;  // extra loss when routed via an OSW
  double est_fidelity_bias = 0.0;  // injected estimation error

  void check() const {
    if (!(length_km > 0)) throw std::invalid_argument("link length must be > 0");
    if (!(attempt_rate_hz > 0))
      throw std::invalid_argument("attempt rate must be > 0");
    if (!(detector_efficiency > 0 && detector_efficiency <= 1))
      throw std::invalid_argument("detector efficiency must be in (0,1]");
    detail::check_fid(base_fidelity, "link base_fidelity");
  }
};

// Direct: one photon, one detector. Midpoint: two photons each crossing
// half the span, two detectors, and the 50% BSA ceiling; total fiber
// loss equals the full length either way.
inline double attempt_success_probability(const LinkSpec& link) {
  double fiber = std::pow(10.0, -link.attenuation_db_per_km * link.length_km /
                                    10.0);
  double sw = std::pow(10.0, -link.switching_loss_db / 10.0);
  if (link.architecture == LinkArch::Direct) {
    return link.detector_efficiency * fiber * sw;
  }
  return 0.5 * link.detector_efficiency * link.detector_efficiency * fiber *
         sw;
}

inline SimTime attempt_period_ps(const LinkSpec& link) {
  return std::max<SimTime>(1, seconds_to_ps(1.0 / link.attempt_rate_hz));
}

inline constexpr double kFiberVelocityMps = 2.0e8;

// One-way photon/herald delay: success is known at both ends one full
// fiber transit after the attempt starts, for every architecture.
inline SimTime link_notify_delay_ps(const LinkSpec& link) {
  return std::max<SimTime>(
      1, seconds_to_ps(link.length_km * 1000.0 / kFiberVelocityMps));
}

}  // namespace qrs
