#pragma once

// Deterministic discrete-event engine: global clock, ordered event queue,
// one seeded random stream. Events with equal fire time execute in
// insertion order, giving a total order that is a pure function of
// (config, seed).

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qrs/core.hpp"

namespace qrs {

enum class EventKind : std::uint8_t {
  LinkAttempt,
  MessageDelivery,
  TimerExpiry,
  ScenarioAction,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::LinkAttempt: return "link_attempt";
    case EventKind::MessageDelivery: return "message";
    case EventKind::TimerExpiry: return "timer";
    case EventKind::ScenarioAction: return "scenario";
  }
  return "?";
}

class SimKernel {
 public:
  explicit SimKernel(std::uint64_t seed) : rng_(seed) {}

  SimTime now() const { return now_; }

  std::uint64_t schedule(SimTime fire_time, EventKind kind, NodeAddr target,
                         std::function<void()> fn) {
    if (fire_time < now_) {
      throw std::logic_error("schedule: event in the past at t=" +
                             std::to_string(now_));
    }
    std::uint64_t id = next_seq_++;
    queue_.push(Entry{fire_time, id, kind, target, std::move(fn)});
    return id;
  }

  void cancel(std::uint64_t event_id) { cancelled_.insert(event_id); }

  struct RunStats {
    std::uint64_t events_executed = 0;
    SimTime end_time = 0;
  };

  // Execute all events with fire_time <= t (or everything, if t is the
  // default), in (fire_time, seq) order.
  RunStats run_until(SimTime t = std::numeric_limits<SimTime>::max()) {
    RunStats stats;
    while (!queue_.empty() && queue_.top().fire_time <= t) {
      Entry e = queue_.top();
      queue_.pop();
      if (auto it = cancelled_.find(e.seq); it != cancelled_.end()) {
        cancelled_.erase(it);
        continue;
      }
      now_ = e.fire_time;
      ++stats.events_executed;
      ++total_events_;
      e.fn();
    }
    if (t != std::numeric_limits<SimTime>::max() && t > now_) now_ = t;
    stats.end_time = now_;
    return stats;
  }

  bool empty() const { return queue_.size() == cancelled_.size(); }
  std::uint64_t total_events() const { return total_events_; }

  // Single random stream; every draw in a run flows through here.
  double uniform() { return (rng_() >> 11) * 0x1p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t uniform_int(std::uint64_t n) {  // [0, n)
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) %
           n;
  }

 private:
  struct Entry {
    SimTime fire_time;
    std::uint64_t seq;
    EventKind kind;
    NodeAddr target;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.fire_time != b.fire_time) return a.fire_time > b.fire_time;
      return a.seq > b.seq;
    }
  };

  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t total_events_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
  std::unordered_set<std::uint64_t> cancelled_;
  std::mt19937_64 rng_;
};

// Classical message fabric. Defaults to the quantum topology at fiber
// speed; per-channel overrides allowed. Multi-hop latency is the sum
// over configured hops (shortest classical path).
class ClassicalFabric {
 public:
  static constexpr double kDefaultVelocity = 2.0e8;  // m/s in fiber

  void add_channel(NodeAddr a, NodeAddr b, double distance_m,
                   double velocity = kDefaultVelocity) {
    SimTime lat = seconds_to_ps(distance_m / velocity);
    if (lat <= 0) lat = 1;
    adj_[a].push_back({b, lat});
    adj_[b].push_back({a, lat});
    cache_.clear();
  }

  void set_loopback_latency(SimTime t) { loopback_ = t; }

  SimTime latency(NodeAddr src, NodeAddr dst) const {
    if (src == dst) return loopback_;
    auto key = std::make_pair(src, dst);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    // Dijkstra by summed latency over the classical channel graph.
    std::map<NodeAddr, SimTime> dist;
    using QE = std::pair<SimTime, NodeAddr>;
    std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
    dist[src] = 0;
    pq.push({0, src});
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      if (u == dst) break;
      auto it = adj_.find(u);
      if (it == adj_.end()) continue;
      for (auto [v, w] : it->second) {
        SimTime nd = d + w;
        auto dit = dist.find(v);
        if (dit == dist.end() || nd < dit->second) {
          dist[v] = nd;
          pq.push({nd, v});
        }
      }
    }
    auto it = dist.find(dst);
    if (it == dist.end()) {
      throw std::runtime_error("classical fabric: no route " +
                               std::to_string(src) + " -> " +
                               std::to_string(dst));
    }
    cache_[key] = it->second;
    return it->second;
  }

 private:
  std::map<NodeAddr, std::vector<std::pair<NodeAddr, SimTime>>> adj_;
  SimTime loopback_ = kPsPerMicrosecond;  // 1 us default
  mutable std::map<std::pair<NodeAddr, NodeAddr>, SimTime> cache_;
};

}  // namespace qrs
