#pragma once

// Connection setup and teardown, including recursive internetworking.
// Networks form a tree; a node that belongs to both a parent and a child
// network is a border (gateway) node. Each layer routes only over what it
// can see: its own physical links plus one virtual link per child-network
// gateway pair. The outbound setup pass accumulates per-hop link info;
// when it meets a virtual hop it pauses, opens a connection inside the
// child network, and resumes once that child is active, rewriting the
// child segment as a single pumpable link. The responder compiles and
// verifies RuleSets and installs them back-to-front so that upstream
// nodes are always ready before pairs start flowing toward them.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qrs/generator.hpp"
#include "qrs/network.hpp"
#include "qrs/routing.hpp"
#include "qrs/verifier.hpp"

namespace qrs {

using NetworkId = int;

struct NetworkDef {
  NetworkId id = 0;
  NetworkId parent = -1;  // -1 = top level
  int layer = 0;          // depth in the network tree
  std::set<NodeAddr> members;
};

enum class ConnState : std::uint8_t {
  SettingUp,
  Rejected,
  Active,
  TornDown,
};

inline const char* to_string(ConnState s) {
  switch (s) {
    case ConnState::SettingUp: return "setting_up";
    case ConnState::Rejected: return "rejected";
    case ConnState::Active: return "active";
    case ConnState::TornDown: return "torn_down";
  }
  return "?";
}

struct Connection {
  ConnectionId id = 0;
  NetworkId network = 0;
  NodeAddr initiator = kNoNode;
  NodeAddr responder = kNoNode;
  Requirements requirements;
  int layer = 0;
  std::vector<NodeAddr> path;
  ConnState state = ConnState::SettingUp;
  ConnectionId parent = 0;             // 0 = application-level connection
  std::vector<ConnectionId> children;  // child connections per virtual hop
  SimTime t_requested = 0;
  SimTime t_active = 0;
  std::string reject_reason;
  std::uint64_t setup_messages = 0;    // outbound-pass hops traversed
  std::uint64_t install_events = 0;    // per-node RuleSet installations
  std::uint64_t delivered = 0;         // initiator-side deliveries (Count)
  int qubit_quota = 1;
  double weight = 1.0;
  std::vector<double> hop_targets;     // waterfilled stage-0 targets
  VerifierReport verdict;
  bool teardown_scheduled = false;
};

// A request payload as seen crossing a boundary, for privacy assertions:
// a layer-k request must never mention addresses interior to a child.
struct ObservedRequest {
  NodeAddr at = kNoNode;
  int layer = 0;
  std::vector<std::uint8_t> payload;
};

class ConnectionManager {
 public:
  explicit ConnectionManager(Simulator& sim) : sim_(sim) {
    sim_.delivery_hook = [this](NodeAddr addr, const DeliveryRecord& rec) {
      on_delivery(addr, rec);
    };
  }

  bool allow_faults = false;
  // Fidelity floor for connections opened inside child networks: a
  // virtual link must hand the parent something worth pumping.
  double child_fidelity_floor = 0.9;

  std::vector<ObservedRequest> observed_requests;

  // ---- topology of networks ----

  NetworkDef& add_network(NetworkId id, NetworkId parent = -1) {
    NetworkDef& n = networks_[id];
    n.id = id;
    n.parent = parent;
    n.layer = parent == -1 ? 0 : networks_.at(parent).layer + 1;
    if (parent != -1) children_[parent].push_back(id);
    return n;
  }

  void add_member(NetworkId net, NodeAddr node) {
    networks_.at(net).members.insert(node);
  }

  const NetworkDef& network(NetworkId id) const { return networks_.at(id); }

  // Deepest network containing both nodes (where the connection lives).
  std::optional<NetworkId> home_network(NodeAddr a, NodeAddr b) const {
    std::optional<NetworkId> best;
    for (const auto& [id, n] : networks_) {
      if (n.members.count(a) && n.members.count(b) &&
          (!best || n.layer > networks_.at(*best).layer)) {
        best = id;
      }
    }
    return best;
  }

  // The layer-visible cost graph: physical links between members, plus
  // one virtual edge per child-network gateway pair.
  std::vector<CostEdge> visible_edges(NetworkId net, double f_index) const {
    const NetworkDef& n = networks_.at(net);
    std::vector<CostEdge> edges;
    for (const auto& lr : sim_.links) {
      if (n.members.count(lr.spec.node_a) && n.members.count(lr.spec.node_b)) {
        edges.push_back({lr.spec.node_a, lr.spec.node_b,
                         link_cost(lr.spec, f_index).seconds_per_pair});
      }
    }
    auto kids = children_.find(net);
    if (kids != children_.end()) {
      for (NetworkId c : kids->second) {
        std::vector<NodeAddr> gates;
        for (NodeAddr m : networks_.at(c).members) {
          if (n.members.count(m)) gates.push_back(m);
        }
        for (std::size_t i = 0; i < gates.size(); ++i) {
          for (std::size_t j = i + 1; j < gates.size(); ++j) {
            double cost = path_cost(c, gates[i], gates[j], f_index);
            if (cost < kInfiniteCost) {
              edges.push_back({gates[i], gates[j], cost});
            }
          }
        }
      }
    }
    return edges;
  }

  double path_cost(NetworkId net, NodeAddr src, NodeAddr dst,
                   double f_index) const {
    auto edges = visible_edges(net, f_index);
    auto path = qdijkstra(edges, src, dst);
    if (!path) return kInfiniteCost;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < path->size(); ++i) {
      double best = kInfiniteCost;
      for (const auto& e : edges) {
        if ((e.a == (*path)[i] && e.b == (*path)[i + 1]) ||
            (e.b == (*path)[i] && e.a == (*path)[i + 1])) {
          best = std::min(best, e.cost);
        }
      }
      total += best;
    }
    return total;
  }

  // ---- lifecycle ----

  ConnectionId open(NodeAddr initiator, NodeAddr responder, Requirements req,
                    int qubit_quota = 1, double weight = 1.0,
                    ConnectionId parent = 0) {
    ConnectionId id = next_id_++;
    Connection& c = conns_[id];
    c.id = id;
    c.initiator = initiator;
    c.responder = responder;
    c.requirements = req;
    c.parent = parent;
    c.qubit_quota = qubit_quota;
    c.weight = weight;
    c.t_requested = sim_.kernel.now();
    auto net = home_network(initiator, responder);
    if (!net) {
      fail(c, "no common network for " + std::to_string(initiator) + " and " +
                  std::to_string(responder));
      return id;
    }
    c.network = *net;
    c.layer = networks_.at(*net).layer;
    auto path = qdijkstra(visible_edges(*net, req.min_fidelity), initiator,
                          responder);
    if (!path) {
      fail(c, "no route from " + std::to_string(initiator) + " to " +
                  std::to_string(responder));
      return id;
    }
    c.path = *path;
    ConnectionRequest rq;
    rq.connection_id = id;
    rq.initiator = initiator;
    rq.responder = responder;
    rq.requirements = req;
    rq.layer = c.layer;
    rq.path = c.path;
    continue_outbound(id, 0, std::move(rq));
    return id;
  }

  void teardown(ConnectionId id) {
    auto it = conns_.find(id);
    if (it == conns_.end()) return;
    Connection& c = it->second;
    if (c.state == ConnState::TornDown) return;  // idempotent
    bool was_active = c.state == ConnState::Active;
    c.state = ConnState::TornDown;
    sim_.splice_parent.erase(id);
    sim_.mux_state.release(id);
    paused_.erase(id);
    for (ConnectionId child : c.children) teardown(child);
    if (was_active && !c.path.empty()) {
      ControlMessage msg;
      msg.kind = ControlMessage::Kind::Teardown;
      msg.connection_id = id;
      sim_.uninstall_ruleset(c.path.front(), id);
      if (c.path.size() > 1) {
        send_control(c.path.front(), c.path[1], std::move(msg));
      }
    }
  }

  // Dry-run a connection: route, recursively expand virtual hops, then
  // generate and verify the RuleSets without scheduling any events.
  struct PlanResult {
    ConnectionRequest request;
    GeneratedConnection generated;
    VerifierReport verdict;
    std::vector<PlanResult> children;  // one per virtual hop
    std::string error;
    bool ok() const {
      if (!error.empty() || !generated.ok() || !verdict.clean()) return false;
      for (const auto& c : children) {
        if (!c.ok()) return false;
      }
      return true;
    }
  };

  PlanResult plan(NodeAddr initiator, NodeAddr responder, Requirements req) {
    PlanResult out;
    auto net = home_network(initiator, responder);
    if (!net) {
      out.error = "no common network for " + std::to_string(initiator) +
                  " and " + std::to_string(responder);
      return out;
    }
    auto path = qdijkstra(visible_edges(*net, req.min_fidelity), initiator,
                          responder);
    if (!path) {
      out.error = "no route from " + std::to_string(initiator) + " to " +
                  std::to_string(responder);
      return out;
    }
    out.request.initiator = initiator;
    out.request.responder = responder;
    out.request.requirements = req;
    out.request.layer = networks_.at(*net).layer;
    out.request.path = *path;
    for (std::size_t k = 0; k + 1 < path->size(); ++k) {
      NodeAddr here = (*path)[k];
      NodeAddr next = (*path)[k + 1];
      if (const LinkSpec* spec = physical_link(here, next)) {
        out.request.accumulated.push_back(physical_info(*spec, here, next));
        continue;
      }
      auto child_net = deeper_network(*net, here, next);
      if (!child_net) {
        out.error = "no link or child network between " +
                    std::to_string(here) + " and " + std::to_string(next);
        return out;
      }
      Requirements child_req;
      child_req.min_fidelity =
          std::max(req.min_fidelity, child_fidelity_floor);
      child_req.mode = ConnMode::Stream;
      out.children.push_back(plan(here, next, child_req));
      const PlanResult& cp = out.children.back();
      if (!cp.error.empty() || !cp.generated.ok()) {
        out.error = "child segment " + std::to_string(here) + "-" +
                    std::to_string(next) + " cannot be planned";
        return out;
      }
      LinkInfo li;
      li.from = here;
      li.to = next;
      li.seconds_per_pair =
          path_cost(*child_net, here, next, child_req.min_fidelity);
      li.base_fidelity = engineered_fidelity(cp.generated.hop_targets,
                                             child_req.min_fidelity);
      li.available_qubits = std::min(end_memory(here), end_memory(next));
      li.one_way_latency = sim_.fabric.latency(here, next);
      li.is_virtual = true;
      li.pumpable = false;
      out.request.accumulated.push_back(li);
    }
    bool init_meas = !sim_.node(initiator).cap.has_memory();
    bool resp_meas = !sim_.node(responder).cap.has_memory();
    out.generated = generate_rulesets(out.request, init_meas, resp_meas);
    if (out.generated.ok()) {
      out.verdict = verify_connection(
          out.generated.rulesets, out.request.path,
          [this](NodeAddr u, NodeAddr v) { return sim_.fabric.latency(u, v); });
    }
    return out;
  }

  const Connection& connection(ConnectionId id) const { return conns_.at(id); }
  Connection* find_connection(ConnectionId id) {
    auto it = conns_.find(id);
    return it == conns_.end() ? nullptr : &it->second;
  }

 private:
  // ---- control-plane transport ----

  void send_control(NodeAddr src, NodeAddr dst, ControlMessage msg) {
    msg.sender = src;
    SimTime lat = sim_.fabric.latency(src, dst);
    sim_.trace("ctrl", src, dst,
               std::string("kind=") +
                   std::to_string(static_cast<int>(msg.kind)) +
                   " conn=" + std::to_string(msg.connection_id));
    sim_.kernel.schedule(sim_.kernel.now() + lat, EventKind::MessageDelivery,
                         dst, [this, dst, msg = std::move(msg)] {
                           handle_control(dst, msg);
                         });
  }

  void handle_control(NodeAddr at, const ControlMessage& msg) {
    switch (msg.kind) {
      case ControlMessage::Kind::ConnectionSetup: {
        ConnectionRequest rq = decode_request(msg.payload);
        observed_requests.push_back({at, rq.layer, msg.payload});
        std::size_t k = index_on_path(rq.path, at);
        conns_.at(rq.connection_id).setup_messages++;
        continue_outbound(rq.connection_id, k, std::move(rq));
        break;
      }
      case ControlMessage::Kind::RuleSetInstall:
        handle_install(at, msg);
        break;
      case ControlMessage::Kind::SetupReject:
        handle_reject(at, msg);
        break;
      case ControlMessage::Kind::SetupComplete:
        break;  // informational
      case ControlMessage::Kind::Teardown: {
        sim_.uninstall_ruleset(at, msg.connection_id);
        const Connection& c = conns_.at(msg.connection_id);
        std::size_t k = index_on_path(c.path, at);
        if (k + 1 < c.path.size()) {
          ControlMessage fwd;
          fwd.kind = ControlMessage::Kind::Teardown;
          fwd.connection_id = msg.connection_id;
          send_control(at, c.path[k + 1], std::move(fwd));
        }
        break;
      }
    }
  }

  static std::size_t index_on_path(const std::vector<NodeAddr>& path,
                                   NodeAddr node) {
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (path[i] == node) return i;
    }
    throw std::logic_error("node " + std::to_string(node) + " not on path");
  }

  // ---- outbound pass ----

  void continue_outbound(ConnectionId id, std::size_t k,
                         ConnectionRequest rq) {
    Connection& c = conns_.at(id);
    if (c.state != ConnState::SettingUp) return;
    if (k + 1 == rq.path.size()) {
      finalize(c, rq);
      return;
    }
    NodeAddr here = rq.path[k];
    NodeAddr next = rq.path[k + 1];
    if (const LinkSpec* spec = physical_link(here, next)) {
      rq.accumulated.push_back(physical_info(*spec, here, next));
      forward_setup(here, next, rq);
      return;
    }
    // Virtual hop: open a connection across the child network that owns
    // both gateways, resume when it comes up.
    auto child_net = deeper_network(c.network, here, next);
    if (!child_net) {
      reject_back(c, k, "no link or child network between " +
                            std::to_string(here) + " and " +
                            std::to_string(next));
      return;
    }
    Requirements child_req;
    child_req.min_fidelity =
        std::max(c.requirements.min_fidelity, child_fidelity_floor);
    child_req.mode = ConnMode::Stream;
    ConnectionId child =
        open(here, next, child_req, c.qubit_quota, c.weight, id);
    conns_.at(id).children.push_back(child);
    Connection& ch = conns_.at(child);
    if (ch.state == ConnState::Rejected) {
      reject_back(conns_.at(id), k,
                  "child connection failed: " + ch.reject_reason);
      return;
    }
    sim_.splice_parent[child] = id;
    paused_[child] = {id, k, std::move(rq)};
  }

  void forward_setup(NodeAddr from, NodeAddr to, const ConnectionRequest& rq) {
    ControlMessage msg;
    msg.kind = ControlMessage::Kind::ConnectionSetup;
    msg.connection_id = rq.connection_id;
    msg.payload = encode_request(rq);
    send_control(from, to, std::move(msg));
  }

  LinkInfo physical_info(const LinkSpec& spec, NodeAddr from, NodeAddr to) {
    LinkInfo li;
    li.from = from;
    li.to = to;
    li.seconds_per_pair = link_cost(spec, spec.base_fidelity).seconds_per_pair;
    li.base_fidelity = spec.base_fidelity;
    li.available_qubits = std::min(end_memory(from), end_memory(to));
    li.one_way_latency = sim_.fabric.latency(from, to);
    li.pumpable = sim_.node(from).cap.has_memory() &&
                  sim_.node(to).cap.has_memory();
    return li;
  }

  // What a child connection was engineered to deliver: the swapped
  // product of its waterfilled hop targets.
  static double engineered_fidelity(const std::vector<double>& targets,
                                    double fallback) {
    if (targets.empty()) return fallback;
    double w = 1.0;
    for (double t : targets) w *= werner_from_fidelity(Fidelity{t}).w;
    return fidelity_from_werner(WernerParam{w}).value;
  }

  const LinkSpec* physical_link(NodeAddr a, NodeAddr b) const {
    for (const auto& lr : sim_.links) {
      if (lr.id == LinkId(a, b)) return &lr.spec;
    }
    return nullptr;
  }

  int end_memory(NodeAddr n) const {
    return const_cast<Simulator&>(sim_).node(n).cap.memory_qubits;
  }

  // The child of `net` (searched depth-first) with both nodes as members.
  std::optional<NetworkId> deeper_network(NetworkId net, NodeAddr a,
                                          NodeAddr b) const {
    auto kids = children_.find(net);
    if (kids == children_.end()) return std::nullopt;
    for (NetworkId c : kids->second) {
      const auto& m = networks_.at(c).members;
      if (m.count(a) && m.count(b)) return c;
    }
    return std::nullopt;
  }

  // A child connection reached Active: rewrite its segment as one
  // virtual link and resume the parent's outbound pass.
  void resume_parent(ConnectionId child) {
    auto it = paused_.find(child);
    if (it == paused_.end()) return;
    auto [parent_id, k, rq] = std::move(it->second);
    paused_.erase(it);
    Connection& ch = conns_.at(child);
    LinkInfo li;
    li.from = rq.path[k];
    li.to = rq.path[k + 1];
    li.seconds_per_pair = path_cost(ch.network, li.from, li.to,
                                    ch.requirements.min_fidelity);
    li.base_fidelity =
        engineered_fidelity(ch.hop_targets, ch.requirements.min_fidelity);
    li.available_qubits = std::min(end_memory(li.from), end_memory(li.to));
    li.one_way_latency = sim_.fabric.latency(li.from, li.to);
    li.is_virtual = true;
    // pumping across a border would race the child's own delivery
    // timing, so the child is asked for the full fidelity up front
    li.pumpable = false;
    rq.accumulated.push_back(li);
    forward_setup(li.from, li.to, rq);
  }

  // ---- responder side ----

  void finalize(Connection& c, const ConnectionRequest& rq) {
    std::map<NodeAddr, int> memory;
    for (NodeAddr n : rq.path) memory[n] = end_memory(n);
    auto admit = sim_.mux_state.admit(c.id, rq.path, memory, c.qubit_quota,
                                      c.weight);
    if (!admit.accepted) {
      reject_back(c, rq.path.size() - 1, "multiplexing: " + admit.reason);
      return;
    }
    bool init_meas = !sim_.node(rq.initiator).cap.has_memory();
    bool resp_meas = !sim_.node(rq.responder).cap.has_memory();
    GeneratedConnection gen = generate_rulesets(rq, init_meas, resp_meas);
    if (!gen.ok()) {
      sim_.mux_state.release(c.id);
      reject_back(c, rq.path.size() - 1, gen.error);
      return;
    }
    c.hop_targets = gen.hop_targets;
    c.verdict = verify_connection(
        gen.rulesets, rq.path,
        [this](NodeAddr u, NodeAddr v) { return sim_.fabric.latency(u, v); });
    if (!c.verdict.clean() && !allow_faults) {
      sim_.mux_state.release(c.id);
      std::string what = "verification failed:";
      for (const auto& f : c.verdict.findings) what += " " + f.kind;
      for (const auto& f : c.verdict.structural) what += " " + f.kind;
      if (c.verdict.inconclusive) what += " inconclusive";
      reject_back(c, rq.path.size() - 1, what);
      return;
    }
    // Install back-to-front: the responder first, then a blob list that
    // each node peels its own entry from before forwarding the rest.
    NodeAddr resp = rq.path.back();
    sim_.install_ruleset(resp, gen.rulesets.at(resp));
    c.install_events++;
    if (rq.path.size() == 1) {
      activate(c);
      return;
    }
    ControlMessage msg;
    msg.kind = ControlMessage::Kind::RuleSetInstall;
    msg.connection_id = c.id;
    for (std::size_t i = rq.path.size() - 1; i-- > 0;) {
      msg.ruleset_blobs.emplace_back(rq.path[i],
                                     encode_ruleset(gen.rulesets.at(rq.path[i])));
    }
    send_control(resp, rq.path[rq.path.size() - 2], std::move(msg));
  }

  void handle_install(NodeAddr at, const ControlMessage& msg) {
    Connection& c = conns_.at(msg.connection_id);
    if (c.state != ConnState::SettingUp) return;  // torn down mid-setup
    if (msg.ruleset_blobs.empty() || msg.ruleset_blobs.front().first != at) {
      fail(c, "install pass misrouted at " + std::to_string(at));
      return;
    }
    sim_.install_ruleset(at, decode_ruleset(msg.ruleset_blobs.front().second));
    c.install_events++;
    if (msg.ruleset_blobs.size() == 1) {
      activate(c);
      ControlMessage done;
      done.kind = ControlMessage::Kind::SetupComplete;
      done.connection_id = c.id;
      send_control(at, c.path.back(), std::move(done));
      return;
    }
    ControlMessage fwd;
    fwd.kind = ControlMessage::Kind::RuleSetInstall;
    fwd.connection_id = msg.connection_id;
    fwd.ruleset_blobs.assign(msg.ruleset_blobs.begin() + 1,
                             msg.ruleset_blobs.end());
    NodeAddr next = fwd.ruleset_blobs.front().first;
    send_control(at, next, std::move(fwd));
  }

  void activate(Connection& c) {
    c.state = ConnState::Active;
    c.t_active = sim_.kernel.now();
    sim_.trace("conn_active", c.initiator, c.responder,
               "conn=" + std::to_string(c.id));
    if (c.parent != 0) resume_parent(c.id);
  }

  // ---- failure paths ----

  void fail(Connection& c, std::string reason) {
    if (c.state != ConnState::SettingUp) return;
    c.state = ConnState::Rejected;
    c.reject_reason = std::move(reason);
    sim_.trace("conn_reject", c.initiator, c.responder, c.reject_reason);
    for (ConnectionId child : c.children) teardown(child);
    sim_.splice_parent.erase(c.id);
    paused_.erase(c.id);
    if (c.parent != 0) {
      if (auto pit = paused_.find(c.id); pit != paused_.end()) {
        paused_.erase(pit);
      }
      if (Connection* p = find_connection(c.parent)) {
        fail(*p, "child connection " + std::to_string(c.id) + " failed: " +
                     c.reject_reason);
      }
    }
  }

  // Reject discovered at path index k: record it and walk the message
  // back toward the initiator so every upstream node learns.
  void reject_back(Connection& c, std::size_t k, std::string reason) {
    ControlMessage msg;
    msg.kind = ControlMessage::Kind::SetupReject;
    msg.connection_id = c.id;
    msg.reason = reason;
    if (k > 0) {
      send_control(c.path[k], c.path[k - 1], std::move(msg));
    }
    fail(c, std::move(reason));
  }

  void handle_reject(NodeAddr at, const ControlMessage& msg) {
    const Connection& c = conns_.at(msg.connection_id);
    std::size_t k = index_on_path(c.path, at);
    if (k > 0) {
      ControlMessage fwd;
      fwd.kind = ControlMessage::Kind::SetupReject;
      fwd.connection_id = msg.connection_id;
      fwd.reason = msg.reason;
      send_control(at, c.path[k - 1], std::move(fwd));
    }
  }

  // ---- count-mode teardown ----

  void on_delivery(NodeAddr addr, const DeliveryRecord& rec) {
    auto it = conns_.find(rec.conn);
    if (it == conns_.end()) return;
    Connection& c = it->second;
    if (addr != c.initiator) return;
    c.delivered++;
    if (c.requirements.mode == ConnMode::Count &&
        c.delivered >= c.requirements.target_count && !c.teardown_scheduled) {
      c.teardown_scheduled = true;
      // deferred: the delivering node is mid-evaluation over its rulesets
      ConnectionId id = c.id;
      sim_.kernel.schedule(sim_.kernel.now(), EventKind::TimerExpiry, addr,
                           [this, id] { teardown(id); });
    }
  }

  Simulator& sim_;
  std::map<NetworkId, NetworkDef> networks_;
  std::map<NetworkId, std::vector<NetworkId>> children_;
  std::map<ConnectionId, Connection> conns_;
  struct Paused {
    ConnectionId parent;
    std::size_t hop;
    ConnectionRequest request;
  };
  std::map<ConnectionId, Paused> paused_;  // keyed by child connection
  ConnectionId next_id_ = 1;
};

}  // namespace qrs
