#pragma once

// qDijkstra with "seconds per Bell pair of some index fidelity" as the
// additive link cost, plus the multiplexing disciplines that assign
// link-generated pairs to connections.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <vector>

#include "qrs/kernel.hpp"
#include "qrs/link.hpp"
#include "qrs/quantum.hpp"

namespace qrs {

inline constexpr double kInfiniteCost =
    std::numeric_limits<double>::infinity();

struct LinkCost {
  double seconds_per_pair = kInfiniteCost;
  int pumping_rounds = 0;
  double expected_raw_pairs = 1.0;
};

// Seconds per pair at F_index. Below the raw fidelity, cost inflates by
// the expected raw-pair consumption of entanglement pumping (one fresh
// raw pair per round); saturation below F_index means infinite cost.
inline LinkCost link_cost(const LinkSpec& link, double f_index) {
  detail::check_fid(f_index, "link_cost");
  double p = attempt_success_probability(link);
  double base = 1.0 / (link.attempt_rate_hz * p);
  double f_raw = link.base_fidelity;
  if (f_raw >= f_index) return {base, 0, 1.0};
  double f = f_raw;
  double expected = 1.0;
  for (int round = 1; round <= 200; ++round) {
    auto out = purify_outcome(f, f_raw);
    expected = (expected + 1.0) / out.p_success;
    double gain = out.f_success - f;
    f = out.f_success;
    if (f >= f_index) return {base * expected, round, expected};
    if (gain < 1e-12) break;  // pumping fixed point reached
  }
  return {kInfiniteCost, 0, expected};
}

struct CostEdge {
  NodeAddr a = kNoNode;
  NodeAddr b = kNoNode;
  double cost = kInfiniteCost;
};

// Minimum total-cost path; equal-cost ties break toward the
// lexicographically smaller node-address sequence.
inline std::optional<std::vector<NodeAddr>> qdijkstra(
    const std::vector<CostEdge>& edges, NodeAddr src, NodeAddr dst) {
  if (src == dst) return std::nullopt;
  std::map<NodeAddr, std::vector<std::pair<NodeAddr, double>>> adj;
  for (const auto& e : edges) {
    if (e.cost == kInfiniteCost) continue;
    adj[e.a].push_back({e.b, e.cost});
    adj[e.b].push_back({e.a, e.cost});
  }
  struct Best {
    double cost;
    std::vector<NodeAddr> path;
  };
  std::map<NodeAddr, Best> best;
  using QE = std::pair<double, std::vector<NodeAddr>>;
  auto cmp = [](const QE& x, const QE& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second > y.second;
  };
  std::priority_queue<QE, std::vector<QE>, decltype(cmp)> pq(cmp);
  pq.push({0.0, {src}});
  best[src] = {0.0, {src}};
  while (!pq.empty()) {
    auto [cost, path] = pq.top();
    pq.pop();
    NodeAddr u = path.back();
    auto it = best.find(u);
    if (it != best.end() &&
        (cost > it->second.cost ||
         (cost == it->second.cost && path > it->second.path))) {
      continue;
    }
    if (u == dst) return path;
    auto ait = adj.find(u);
    if (ait == adj.end()) continue;
    for (auto [v, w] : ait->second) {
      if (std::find(path.begin(), path.end(), v) != path.end()) continue;
      double nc = cost + w;
      auto np = path;
      np.push_back(v);
      auto bit = best.find(v);
      if (bit == best.end() || nc < bit->second.cost ||
          (nc == bit->second.cost && np < bit->second.path)) {
        best[v] = {nc, np};
        pq.push({nc, std::move(np)});
      }
    }
  }
  return std::nullopt;
}

// ---- Multiplexing ----

enum class MuxDiscipline : std::uint8_t { Circuit, StatMux, BufferSpace };

inline const char* to_string(MuxDiscipline d) {
  switch (d) {
    case MuxDiscipline::Circuit: return "circuit";
    case MuxDiscipline::StatMux: return "statmux";
    case MuxDiscipline::BufferSpace: return "bufferspace";
  }
  return "?";
}

struct LinkId {
  NodeAddr a = kNoNode;
  NodeAddr b = kNoNode;
  LinkId() = default;
  LinkId(NodeAddr x, NodeAddr y) : a(std::min(x, y)), b(std::max(x, y)) {}
  auto operator<=>(const LinkId&) const = default;
};

struct AdmitResult {
  bool accepted = false;
  std::string reason;
};

// Per-run multiplexing state. Circuit reserves whole links exclusively;
// BufferSpace partitions node memories by a per-connection qubit quota;
// StatMux admits everything and splits arrivals by weight.
class MuxState {
 public:
  explicit MuxState(MuxDiscipline d) : discipline_(d) {}

  MuxDiscipline discipline() const { return discipline_; }

  AdmitResult admit(ConnectionId conn, const std::vector<NodeAddr>& path,
                    const std::map<NodeAddr, int>& node_memory,
                    int qubit_quota = 1, double weight = 1.0) {
    std::vector<LinkId> links;
    for (std::size_t i = 0; i + 1 < path.size(); ++i)
      links.emplace_back(path[i], path[i + 1]);
    switch (discipline_) {
      case MuxDiscipline::Circuit:
        for (const auto& l : links) {
          if (circuit_owner_.count(l)) {
            return {false, "link " + std::to_string(l.a) + "-" +
                               std::to_string(l.b) + " already reserved"};
          }
        }
        for (const auto& l : links) circuit_owner_[l] = conn;
        break;
      case MuxDiscipline::BufferSpace:
        for (NodeAddr n : path) {
          auto mem = node_memory.find(n);
          int cap = mem == node_memory.end() ? 0 : mem->second;
          if (cap > 0 && reserved_[n] + qubit_quota > cap) {
            return {false, "node " + std::to_string(n) +
                               " lacks qubit quota (" +
                               std::to_string(reserved_[n]) + "+" +
                               std::to_string(qubit_quota) + ">" +
                               std::to_string(cap) + ")"};
          }
        }
        for (NodeAddr n : path) reserved_[n] += qubit_quota;
        quota_[conn] = qubit_quota;
        break;
      case MuxDiscipline::StatMux:
        break;
    }
    for (const auto& l : links) active_[l].push_back({conn, weight});
    conn_links_[conn] = links;
    conn_path_[conn] = path;
    return {true, ""};
  }

  void release(ConnectionId conn) {
    auto it = conn_links_.find(conn);
    if (it == conn_links_.end()) return;
    for (const auto& l : it->second) {
      auto& v = active_[l];
      std::erase_if(v, [&](const Entry& e) { return e.conn == conn; });
      if (auto o = circuit_owner_.find(l);
          o != circuit_owner_.end() && o->second == conn) {
        circuit_owner_.erase(o);
      }
    }
    if (auto q = quota_.find(conn); q != quota_.end()) {
      for (NodeAddr n : conn_path_[conn]) reserved_[n] -= q->second;
      quota_.erase(q);
    }
    conn_links_.erase(it);
    conn_path_.erase(conn);
  }

  // Pick the connection a fresh pair on `link` belongs to. `live` is a
  // callback reporting the connection's current live pair count on the
  // link (for BufferSpace quota enforcement).
  template <typename LiveFn>
  std::optional<ConnectionId> assign(LinkId link, SimKernel& kernel,
                                     LiveFn&& live) {
    auto it = active_.find(link);
    if (it == active_.end() || it->second.empty()) return std::nullopt;
    const auto& conns = it->second;
    switch (discipline_) {
      case MuxDiscipline::Circuit:
        return conns.front().conn;
      case MuxDiscipline::BufferSpace: {
        // deterministic round-robin among connections with spare quota
        std::size_t n = conns.size();
        std::size_t start = rr_[link] % n;
        for (std::size_t k = 0; k < n; ++k) {
          const Entry& e = conns[(start + k) % n];
          if (live(e.conn) < quota_.at(e.conn)) {
            rr_[link] = (start + k + 1) % n;
            return e.conn;
          }
        }
        return std::nullopt;
      }
      case MuxDiscipline::StatMux: {
        double total = 0.0;
        for (const auto& e : conns) total += e.weight;
        double x = kernel.uniform() * total;
        for (const auto& e : conns) {
          x -= e.weight;
          if (x <= 0.0) return e.conn;
        }
        return conns.back().conn;
      }
    }
    return std::nullopt;
  }

  std::size_t active_on(LinkId link) const {
    auto it = active_.find(link);
    return it == active_.end() ? 0 : it->second.size();
  }

 private:
  struct Entry {
    ConnectionId conn;
    double weight;
  };
  MuxDiscipline discipline_;
  std::map<LinkId, std::vector<Entry>> active_;
  std::map<LinkId, ConnectionId> circuit_owner_;
  std::map<NodeAddr, int> reserved_;
  std::map<ConnectionId, int> quota_;
  std::map<ConnectionId, std::vector<LinkId>> conn_links_;
  std::map<ConnectionId, std::vector<NodeAddr>> conn_path_;
  std::map<LinkId, std::size_t> rr_;
};

}  // namespace qrs
