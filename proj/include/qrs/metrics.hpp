#pragma once

// Metrics emission: one line-delimited record per entity, written at the
// end of a run. The schema is versioned and the content is a pure
// function of the simulation state, so a fixed seed reproduces the file
// byte for byte (wall-clock time is deliberately absent).

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "qrs/connection.hpp"
#include "qrs/network.hpp"

namespace qrs {

inline constexpr int kMetricsSchemaVersion = 1;

namespace detail {

inline std::string fixed6(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(6) << v;
  return ss.str();
}

}  // namespace detail

// `names` maps connection ids to scenario-level connection names.
inline void write_metrics(std::ostream& out, Simulator& sim,
                          const ConnectionManager* mgr,
                          const std::map<ConnectionId, std::string>& names) {
  out << "schema qrs-metrics " << kMetricsSchemaVersion << "\n";
  double elapsed_s = ps_to_seconds(sim.kernel.now());
  out << "global sim_seconds=" << detail::fixed6(elapsed_s)
      << " events=" << sim.kernel.total_events()
      << " pairs_link=" << sim.registry.created_by_link()
      << " pairs_swap=" << sim.registry.created_by_swap()
      << " protocol_faults=" << sim.protocol_faults << "\n";

  // Accounting identity: every created pair half is in exactly one bucket.
  auto census = sim.registry.census();
  std::uint64_t total = 0;
  out << "census";
  for (const auto& [fate, n] : census) {
    out << " " << to_string(fate) << "=" << n;
    total += n;
  }
  out << " total=" << total << " expected=" << sim.registry.total_halves()
      << "\n";

  for (const auto& [id, cs] : sim.conn_stats) {
    out << "conn ";
    if (auto it = names.find(id); it != names.end()) {
      out << it->second;
    } else {
      out << id;
    }
    out << " id=" << id;
    if (mgr) {
      if (const Connection* c =
              const_cast<ConnectionManager*>(mgr)->find_connection(id)) {
        out << " layer=" << c->layer << " state=" << to_string(c->state);
        if (c->t_active > 0) {
          out << " setup_seconds="
              << detail::fixed6(ps_to_seconds(c->t_active - c->t_requested));
        }
      }
    }
    std::uint64_t delivered = cs.delivered_initiator;
    out << " assigned=" << cs.assigned_pairs << " delivered=" << delivered
        << " spliced=" << cs.spliced << " freed=" << cs.freed;
    double ends =
        static_cast<double>(cs.delivered_initiator + cs.delivered_responder);
    if (ends > 0) {
      out << " pairs_per_second="
          << detail::fixed6(static_cast<double>(delivered) /
                            std::max(elapsed_s, 1e-12))
          << " mean_est_fidelity=" << detail::fixed6(cs.sum_delivered_est / ends)
          << " mean_true_fidelity="
          << detail::fixed6(cs.sum_delivered_true / ends);
    }
    out << "\n";
  }

  for (const auto& lr : sim.links) {
    out << "link " << lr.spec.node_a << "-" << lr.spec.node_b
        << " attempts=" << lr.stats.attempts
        << " successes=" << lr.stats.successes
        << " stalls=" << lr.stats.stalls
        << " interface_skips=" << lr.stats.interface_skips;
    if (lr.stats.successes > 0) {
      out << " seconds_per_pair="
          << detail::fixed6(elapsed_s /
                            static_cast<double>(lr.stats.successes));
    }
    out << "\n";
  }

  for (const auto& [addr, nd] : sim.nodes) {
    out << "node " << addr << " rules_fired=" << nd.stats.rules_fired
        << " purify_rounds=" << nd.stats.purify_rounds
        << " purify_kept=" << nd.stats.purify_kept
        << " swaps=" << nd.stats.swaps << " delivered=" << nd.stats.delivered
        << " freed=" << nd.stats.freed
        << " stale_freed=" << nd.stats.stale_freed
        << " faults=" << nd.stats.faults
        << " messages_rx=" << nd.stats.messages_rx << "\n";
  }
}

// True when every created pair half landed in exactly one fate bucket.
inline bool accounting_holds(Simulator& sim) {
  auto census = sim.registry.census();
  std::uint64_t total = 0;
  for (const auto& [fate, n] : census) total += n;
  return total == sim.registry.total_halves();
}

}  // namespace qrs
